//! Schedule invariants.

use std::collections::BTreeSet;

use anymole_mimic::{inward_schedule, plan_sequence, InitSource, Round};
use proptest::prelude::*;

proptest! {
    #[test]
    fn schedule_covers_each_interior_frame_once(k1 in 0usize..50, gap in 0usize..40) {
        let k2 = k1 + gap;
        let mut seen = Vec::new();
        for r in inward_schedule(k1, k2) {
            match r {
                Round::Pair(a, b) => { seen.push(a); seen.push(b); }
                Round::Middle(m) => seen.push(m),
            }
        }
        let set: BTreeSet<_> = seen.iter().copied().collect();
        prop_assert_eq!(set.len(), seen.len());
        let expected: BTreeSet<_> = (k1 + 1..k2.max(k1 + 1)).collect();
        prop_assert_eq!(set, expected);
    }

    #[test]
    fn tasks_start_from_frames_nearer_a_keyframe(
        gaps in prop::collection::vec(1usize..20, 1..6),
        batch in 1usize..8,
    ) {
        let mut keys = vec![0];
        for g in gaps {
            let last = *keys.last().unwrap();
            keys.push(last + g);
        }
        let plan = plan_sequence(&keys, batch);
        let mut done: BTreeSet<usize> = keys.iter().copied().collect();
        for round in &plan.rounds {
            for b in round {
                prop_assert!(b.len() <= batch);
            }
            let tasks: Vec<_> = round.iter().flatten().collect();
            for t in &tasks {
                let dist = |f: usize| (f - t.keys.0).min(t.keys.1 - f);
                let sources = match t.init {
                    InitSource::Frame(f) => vec![f],
                    InitSource::Between(a, b) => vec![a, b],
                };
                for s in sources {
                    prop_assert!(done.contains(&s));
                    prop_assert!(dist(s) < dist(t.frame));
                }
                prop_assert!(done.contains(&t.rotation_ref));
            }
            done.extend(tasks.iter().map(|t| t.frame));
        }
        let total: usize = keys.windows(2).map(|w| w[1] - w[0] - 1).sum();
        prop_assert_eq!(plan.tasks().count(), total);
    }
}
