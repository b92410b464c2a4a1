//! Inward optimization order between keyframes and its batching.

use serde::{Deserialize, Serialize};

/// One step of an inward schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Round {
    /// `(k1 + f, k2 - f)`, each seeded from its outer neighbor.
    Pair(usize, usize),
    /// The single frame left when both sides meet.
    Middle(usize),
}

/// Frames strictly between `k1` and `k2`, outermost first.
pub fn inward_schedule(k1: usize, k2: usize) -> Vec<Round> {
    let mut out = Vec::new();
    if k2 <= k1 + 1 {
        return out;
    }
    let mut f = 1;
    while k1 + f < k2 - f {
        out.push(Round::Pair(k1 + f, k2 - f));
        f += 1;
    }
    if k1 + f == k2 - f {
        out.push(Round::Middle(k1 + f));
    }
    out
}

/// Where a task's starting pose comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitSource {
    Frame(usize),
    /// Blend of the two flanking frames.
    Between(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTask {
    pub frame: usize,
    pub init: InitSource,
    /// Frame whose rotations regularize this one.
    pub rotation_ref: usize,
    /// Bracketing keyframes, for the root position target.
    pub keys: (usize, usize),
}

impl FrameTask {
    /// Root target: linear interpolation of the bracketing keyframe roots.
    pub fn interpolation_weight(&self) -> f64 {
        let (a, b) = self.keys;
        (self.frame - a) as f64 / (b - a) as f64
    }
}

/// Tasks of one schedule round for one keyframe interval: lower side first.
fn round_tasks(round: Round, keys: (usize, usize)) -> Vec<FrameTask> {
    match round {
        Round::Pair(lo, hi) => vec![
            FrameTask {
                frame: lo,
                init: InitSource::Frame(lo - 1),
                rotation_ref: lo - 1,
                keys,
            },
            FrameTask {
                frame: hi,
                init: InitSource::Frame(hi + 1),
                rotation_ref: hi + 1,
                keys,
            },
        ],
        Round::Middle(m) => vec![FrameTask {
            frame: m,
            init: InitSource::Between(m - 1, m + 1),
            rotation_ref: m - 1,
            keys,
        }],
    }
}

/// Rounds run in order; the tasks of a round are independent and split
/// into batches of at most `batch_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePlan {
    pub rounds: Vec<Vec<Vec<FrameTask>>>,
}

impl SequencePlan {
    /// Number of batch optimizations.
    pub fn repetitions(&self) -> usize {
        self.rounds.iter().map(Vec::len).sum()
    }

    pub fn tasks(&self) -> impl Iterator<Item = &FrameTask> {
        self.rounds.iter().flatten().flatten()
    }
}

/// Plans every interval between consecutive `keyframes` together: round `r`
/// gathers the `r`-th schedule step of each interval, all lower-side tasks
/// before upper-side and middle tasks.
pub fn plan_sequence(keyframes: &[usize], batch_size: usize) -> SequencePlan {
    let batch_size = batch_size.max(1);
    let schedules: Vec<((usize, usize), Vec<Round>)> = keyframes
        .windows(2)
        .map(|w| ((w[0], w[1]), inward_schedule(w[0], w[1])))
        .collect();
    let depth = schedules.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
    let mut rounds = Vec::with_capacity(depth);
    for r in 0..depth {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for (keys, sched) in &schedules {
            if let Some(round) = sched.get(r) {
                let mut tasks = round_tasks(*round, *keys).into_iter();
                lower.extend(tasks.next());
                upper.extend(tasks);
            }
        }
        lower.extend(upper);
        rounds.push(lower.chunks(batch_size).map(<[FrameTask]>::to_vec).collect());
    }
    SequencePlan { rounds }
}
