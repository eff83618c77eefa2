use super::{Episode, ReplayError, Sequence, Transition};

/// Start indices of the length-`m` windows cut from an episode of `t_len`
/// transitions. Windows advance by `m/2`; if that leaves a tail uncovered,
/// one more window is anchored to the episode end, overlapping its
/// predecessor by between `m/2` and `m-1`. Episodes shorter than `m` yield a
/// single window starting at 0 (to be front-padded).
pub fn window_starts(t_len: usize, m: usize) -> Result<Vec<usize>, ReplayError> {
    check_length(m)?;
    if t_len == 0 {
        return Err(ReplayError::EmptyEpisode);
    }
    if t_len < m {
        return Ok(vec![0]);
    }
    let half = m / 2;
    let mut starts: Vec<usize> = (0..).map(|i| i * half).take_while(|s| s + m <= t_len).collect();
    let last_end = starts.last().map_or(0, |s| s + m);
    if last_end < t_len {
        starts.push(t_len - m);
    }
    Ok(starts)
}

pub(crate) fn check_length(m: usize) -> Result<(), ReplayError> {
    if m < 2 || m % 2 != 0 {
        return Err(ReplayError::InvalidLength(m));
    }
    Ok(())
}

/// Cut an episode into fixed-length sequences that never leave it.
pub fn segment_episode(episode: &Episode, m: usize) -> Result<Vec<Sequence>, ReplayError> {
    let t_len = episode.transitions.len();
    let starts = window_starts(t_len, m)?;
    let mut out = Vec::with_capacity(starts.len());
    for start in starts {
        let end = (start + m).min(t_len);
        let pad = m - (end - start);
        let mut transitions = Vec::with_capacity(m);
        transitions.extend(std::iter::repeat_n(Transition::pad(), pad));
        transitions.extend_from_slice(&episode.transitions[start..end]);
        let final_obs = if end == t_len {
            episode.final_obs
        } else {
            episode.transitions[end].obs
        };
        out.push(Sequence {
            transitions,
            final_obs,
            episode_id: episode.id,
            start_index: start,
        });
    }
    Ok(out)
}
