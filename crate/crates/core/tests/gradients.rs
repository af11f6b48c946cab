mod common;

use imcsnn::network::Mode;

fn survey(mode: Mode) {
    let (reports, rejected) = common::gradient_survey(mode, 12, 7, 1e-3);
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    eprintln!("{mode:?}: worst rel err {worst:.2e}, {rejected} kinked samples skipped");
    assert!(worst < 1e-5, "{mode:?}: worst relative gradient error {worst:e}");
}

#[test]
fn rc_spike_gradients_match_central_differences() {
    survey(Mode::RcSpike);
}

#[test]
fn ttfs_gradients_match_central_differences() {
    survey(Mode::Ttfs);
}
