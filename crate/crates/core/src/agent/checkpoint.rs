//! Agent checkpoints: `b"RD2A"`, a u32 network count (always 4), then the
//! actor, critic, target actor and target critic in the single-network format.

use std::path::Path;

use super::{AgentError, AgentNets, NetworkConfig};
use crate::nn::{deserialize_params, serialize_params, NnError};

const MAGIC: &[u8; 4] = b"RD2A";

pub fn write_agent(nets: &AgentNets) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&4u32.to_le_bytes());
    for p in [&nets.actor, &nets.critic, &nets.target_actor, &nets.target_critic] {
        out.extend_from_slice(&serialize_params(p));
    }
    out
}

/// Parse a checkpoint; with `expected`, every network must match its shape.
pub fn read_agent(bytes: &[u8], expected: Option<&NetworkConfig>) -> Result<AgentNets, AgentError> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(NnError::Format("not an agent checkpoint".into()).into());
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if count != 4 {
        return Err(NnError::Format(format!("expected 4 networks, found {count}")).into());
    }
    let specs = expected.map(|c| [c.actor_spec(), c.critic_spec(), c.actor_spec(), c.critic_spec()]);
    let mut pos = 8;
    let mut nets = Vec::with_capacity(4);
    for i in 0..4 {
        let (p, used) = deserialize_params(&bytes[pos..], specs.as_ref().map(|s| &s[i]))?;
        pos += used;
        nets.push(p);
    }
    if pos != bytes.len() {
        return Err(NnError::Format("trailing bytes after checkpoint".into()).into());
    }
    let mut it = nets.into_iter();
    let mut next = || it.next().unwrap();
    Ok(AgentNets {
        actor: next(),
        critic: next(),
        target_actor: next(),
        target_critic: next(),
    })
}

/// Write through a temporary file so a crash never leaves a torn checkpoint.
pub fn save_agent(path: &Path, nets: &AgentNets) -> Result<(), AgentError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, write_agent(nets))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_agent(path: &Path, expected: Option<&NetworkConfig>) -> Result<AgentNets, AgentError> {
    read_agent(&std::fs::read(path)?, expected)
}
