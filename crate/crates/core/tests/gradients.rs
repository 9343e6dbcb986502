use volsampler_core::proposal::gradcheck::{
    check_conv, check_network, check_relu, check_skip_add, check_softmax_ce, check_upsample, GradCheck,
};
use volsampler_core::rng::stream_rng;
use volsampler_core::Result;

const CONFIGS: u64 = 50;
const TOLERANCE: f64 = 1e-4;

fn run<F>(name: &str, seed: u64, check: F)
where
    F: Fn(&mut volsampler_core::rng::StreamRng) -> Result<GradCheck>,
{
    let mut worst = 0.0f64;
    for i in 0..CONFIGS {
        let mut rng = stream_rng(seed, 0, i);
        let c = check(&mut rng).unwrap();
        assert!(c.entries > 0);
        assert!(c.max_rel_error < TOLERANCE, "{name} config {i}: {c:?}");
        worst = worst.max(c.max_rel_error);
    }
    eprintln!("{name}: worst relative error {worst:.2e}");
}

#[test]
fn conv_gradients() {
    run("conv", 1, check_conv);
}

#[test]
fn relu_gradients() {
    run("relu", 2, check_relu);
}

#[test]
fn upsample_gradients() {
    run("upsample", 3, check_upsample);
}

#[test]
fn skip_add_gradients() {
    run("skip-add", 4, check_skip_add);
}

#[test]
fn softmax_cross_entropy_gradients() {
    run("softmax-ce", 5, check_softmax_ce);
}

#[test]
fn whole_network_gradients() {
    run("network", 6, check_network);
}
