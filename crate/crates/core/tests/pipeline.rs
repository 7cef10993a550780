//! End-to-end runs: matching feeding the flow solver, and reproducibility
//! across thread pools.

use deepmatch::correspondence::{deep_matching, format_matches, MatchParams};
use deepmatch::evalio::{epe, MetricReport};
use deepmatch::flow::{rasterize_matches, solve_flow, FlowParams, MatchTermField};
use deepmatch::invariance::{match_invariant, InvariantParams};
use deepmatch::synth::{warped_pair, Affine, Texture};

#[test]
fn matches_improve_flow_under_large_motion() {
    let tex = Texture::new(17, 128.0);
    let (a, b, gt) = warped_pair(&tex, 128, 96, &Affine::translation(18.0, -9.0));
    let set = deep_matching(&a, &b, &MatchParams::default()).unwrap();
    let p = FlowParams::default();
    let guided = solve_flow(
        &a,
        &b,
        &rasterize_matches(&set.matches, &a, &b, &p).unwrap(),
        &p,
    )
    .unwrap();
    let blind = solve_flow(&a, &b, &MatchTermField::empty(128, 96), &p).unwrap();
    let (eg, eb) = (
        epe(&guided, &gt).unwrap().epe,
        epe(&blind, &gt).unwrap().epe,
    );
    assert!(eg < 1.0, "guided epe {eg}");
    assert!(eg < eb, "guided {eg} vs blind {eb}");
    let rep = MetricReport::for_flow(&guided, &gt, 3.0).unwrap();
    assert!(rep.epe.unwrap() < 1.0);
}

#[test]
fn matching_is_identical_across_thread_pools() {
    let tex = Texture::new(3, 80.0);
    let warp = Affine::similarity_about((40.0, 40.0), 0.2, 0.9);
    let (a, b, _) = warped_pair(&tex, 80, 80, &warp);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let p = MatchParams {
                    dict_size: 16,
                    seed: 11,
                    ..MatchParams::default()
                };
                format_matches(&deep_matching(&a, &b, &p).unwrap().matches)
            })
    };
    let one = run(1);
    assert!(!one.is_empty());
    assert_eq!(one, run(3));
    assert_eq!(one, run(1));
}

#[test]
fn invariant_mode_ignores_cell_scheduling() {
    let tex = Texture::new(4, 64.0);
    let (a, b, _) = warped_pair(
        &tex,
        64,
        64,
        &Affine::similarity_about((32.0, 32.0), 1.2, 1.0),
    );
    let mut ip = InvariantParams::default();
    ip.cells.truncate(16);
    let seq = match_invariant(&a, &b, &ip).unwrap();
    ip.parallel_cells = true;
    let par = match_invariant(&a, &b, &ip).unwrap();
    assert_eq!(seq.set, par.set);
    assert_eq!(seq.provenance, par.provenance);
    assert_eq!(seq.kept_per_cell(16).iter().sum::<usize>(), seq.set.len());
}
