use anymole_diffusion::stages::plan_two_stage;
use proptest::prelude::*;

#[test]
fn call_counts_are_affine_in_duration() {
    let calls: Vec<i64> = (3..=10).map(|t| plan_two_stage(t, 2).unwrap().total_calls as i64).collect();
    for w in calls.windows(3) {
        assert_eq!(w[2] - 2 * w[1] + w[0], 0);
    }
    assert!(calls.windows(2).all(|w| w[1] > w[0]));
}

proptest! {
    #[test]
    fn guided_indices_stay_in_segment(total in 3usize..12, ctx in 0usize..3) {
        let plan = plan_two_stage(total, ctx.min(total)).unwrap();
        for seg in plan.coarse.segments.iter().chain(&plan.fine.segments) {
            prop_assert!(seg.guided.iter().all(|&i| i < 16));
            prop_assert!(seg.guided.contains(&0) && seg.guided.contains(&15));
        }
        prop_assert_eq!(plan.coarse.segments.len(), total - 2);
        prop_assert_eq!(plan.fine.segments.len(), total);
    }
}
