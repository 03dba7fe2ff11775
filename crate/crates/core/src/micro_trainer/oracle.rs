use super::{flatten_grads, Network};
use crate::arch_ir::{HeadInput, ModelSpec, OpSpec, TensorShape};
use crate::cost_model::forward_addmul;
use crate::rng::SplitMix64;
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn plain(stem: Vec<OpSpec>, head: Vec<OpSpec>) -> ModelSpec {
    ModelSpec {
        stem,
        cells: vec![],
        reduction_positions: BTreeSet::new(),
        channel_width: 1,
        head_input: HeadInput::Flatten,
        head,
    }
}

fn pick(rng: &mut SplitMix64, lo: usize, hi: usize) -> usize {
    lo + rng.below((hi - lo + 1) as u64) as usize
}

/// A stack of 1 to 4 dense layers with leaky or identity activations
/// between them.
pub fn random_dense_net(rng: &mut SplitMix64, bias: bool) -> (ModelSpec, TensorShape) {
    let layers = pick(rng, 1, 4);
    let mut head = Vec::new();
    for i in 0..layers {
        head.push(OpSpec::dense(pick(rng, 1, 12), bias));
        if i + 1 < layers {
            head.push(if rng.below(2) == 0 { OpSpec::leaky_relu() } else { OpSpec::identity() });
        }
    }
    (plain(vec![], head), TensorShape::flat(pick(rng, 1, 12)))
}

/// One or two conv layers on a small grid, then a dense output. With
/// `wide` the grid is 8..=12 per side with stride 1 and dilation 1, so
/// border taps stay a minority.
pub fn random_conv_net(rng: &mut SplitMix64, wide: bool) -> (ModelSpec, TensorShape) {
    loop {
        let (m, input) = draw_conv_net(rng, wide);
        if crate::arch_ir::infer_shapes(&m, &input).is_ok() {
            return (m, input);
        }
    }
}

fn draw_conv_net(rng: &mut SplitMix64, wide: bool) -> (ModelSpec, TensorShape) {
    let rank = if wide { 3 } else { pick(rng, 1, 3) };
    let spatial: Vec<usize> = (0..rank).map(|_| if wide { pick(rng, 8, 12) } else { pick(rng, 2, 7) }).collect();
    let mut stem = Vec::new();
    for _ in 0..pick(rng, 1, 2) {
        let kernel = [1, 3, 5][pick(rng, 0, if wide { 1 } else { 2 })];
        let stride = if wide { 1 } else { pick(rng, 1, 2) };
        let dilation = if wide { 1 } else { pick(rng, 1, 2) };
        stem.push(OpSpec { dilation, ..OpSpec::conv3d(kernel, stride, pick(rng, 1, 3), rng.below(2) == 0) });
        stem.push(OpSpec::leaky_relu());
    }
    let input = TensorShape::new(pick(rng, 1, 3), spatial);
    (plain(stem, vec![OpSpec::dense(pick(rng, 1, 3), rng.below(2) == 0)]), input)
}

fn inputs(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

/// `(forward, backward)` multiply-adds of one pass with random data.
fn counted_pass(model: &ModelSpec, input: &TensorShape, rng: &mut SplitMix64) -> (Network, u64, u64) {
    let mut net = Network::new(model, input, rng.next_u64()).expect("oracle nets are supported");
    let x = inputs(rng, net.input_len());
    let (_, fwd) = net.forward_counted(&x).unwrap();
    let up = inputs(rng, net.output_len());
    let (_, _, bwd) = net.backward_counted(&up).unwrap();
    (net, fwd.multiply_adds, bwd.multiply_adds)
}

/// Largest violation of `|a - b| <= rtol * max(|a|, |b|) + atol` between
/// backward gradients and central differences of `sum(u * output)`.
pub fn finite_difference_error(net: &mut Network, rng: &mut SplitMix64) -> (usize, usize) {
    let x = inputs(rng, net.input_len());
    let u = inputs(rng, net.output_len());
    net.forward_counted(&x).unwrap();
    let (grads, _, _) = net.backward_counted(&u).unwrap();
    let analytic = flatten_grads(&grads);
    let base = net.params();
    let objective = |net: &mut Network, p: &[f64]| {
        net.set_params(p).unwrap();
        let (y, _) = net.forward_counted(&x).unwrap();
        y.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
    };
    let h = 1e-6;
    let mut bad = 0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        let up = objective(net, &p);
        p[i] = base[i] - h;
        let down = objective(net, &p);
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        if (a - numeric).abs() > 1e-4 * a.abs().max(numeric.abs()) + 1e-8 {
            bad += 1;
        }
    }
    net.set_params(&base).unwrap();
    (bad, base.len())
}

/// Cross-checks between the counted engine and the analytic cost model.
pub fn oracle_suite(seed: u64) -> Vec<OracleCheck> {
    let mut rng = SplitMix64::new(seed);
    let mut checks = Vec::new();

    let mut exact = 0;
    let mut worst = String::new();
    const DENSE_NETS: usize = 24;
    for _ in 0..DENSE_NETS {
        let (m, input) = random_dense_net(&mut rng, false);
        let (_, f, b) = counted_pass(&m, &input, &mut rng);
        if f + b == 3 * f && f > 0 {
            exact += 1;
        } else {
            worst = format!("fwd {f} bwd {b}");
        }
    }
    checks.push(OracleCheck {
        name: "dense (fwd+bwd)/fwd == 3".into(),
        passed: exact == DENSE_NETS,
        detail: format!("{exact}/{DENSE_NETS} exact {worst}"),
    });

    let mut equal = 0;
    let mut total = 0;
    let mut mismatch = String::new();
    for i in 0..48 {
        let (m, input) = match i % 3 {
            0 => {
                let bias = rng.below(2) == 0;
                random_dense_net(&mut rng, bias)
            }
            1 => random_conv_net(&mut rng, false),
            _ => random_conv_net(&mut rng, true),
        };
        let (_, f, _) = counted_pass(&m, &input, &mut rng);
        let analytic = forward_addmul(&m, &input, 1).unwrap();
        total += 1;
        if analytic == f {
            equal += 1;
        } else {
            mismatch = format!("counted {f} vs model {analytic} on {input}");
        }
    }
    checks.push(OracleCheck {
        name: "forward count == cost model".into(),
        passed: equal == total,
        detail: format!("{equal}/{total} equal {mismatch}"),
    });

    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..12 {
        let (m, input) = random_conv_net(&mut rng, true);
        let (_, f, b) = counted_pass(&m, &input, &mut rng);
        let r = (f + b) as f64 / f as f64;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    checks.push(OracleCheck {
        name: "conv3d (fwd+bwd)/fwd in [2.5, 3.5]".into(),
        passed: lo >= 2.5 && hi <= 3.5,
        detail: format!("ratios {lo:.4} .. {hi:.4}"),
    });

    let (mut bad, mut count) = (0, 0);
    for i in 0..12 {
        let (m, input) = if i % 2 == 0 { random_dense_net(&mut rng, true) } else { random_conv_net(&mut rng, false) };
        let mut net = Network::new(&m, &input, rng.next_u64()).unwrap();
        if net.param_count() > 1000 {
            continue;
        }
        let (b, n) = finite_difference_error(&mut net, &mut rng);
        bad += b;
        count += n;
    }
    checks.push(OracleCheck {
        name: "gradients match central differences".into(),
        passed: bad == 0,
        detail: format!("{bad} of {count} parameters off"),
    });
    checks
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn suite_passes() {
        for c in oracle_suite(2024) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn suite_is_deterministic() {
        assert_eq!(oracle_suite(5), oracle_suite(5));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dense_fb_factor_is_three(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let (m, input) = random_dense_net(&mut rng, false);
            let (_, f, b) = counted_pass(&m, &input, &mut rng);
            prop_assert_eq!(f + b, 3 * f);
        }

        #[test]
        fn forward_count_equals_model(seed in any::<u64>(), conv in any::<bool>()) {
            let mut rng = SplitMix64::new(seed);
            let (m, input) = if conv { random_conv_net(&mut rng, false) } else { random_dense_net(&mut rng, true) };
            let (_, f, _) = counted_pass(&m, &input, &mut rng);
            prop_assert_eq!(f, forward_addmul(&m, &input, 1).unwrap());
        }

        #[test]
        fn gradients_match_finite_differences(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let (m, input) = random_conv_net(&mut rng, false);
            let mut net = Network::new(&m, &input, seed).unwrap();
            prop_assume!(net.param_count() <= 1000);
            let (bad, _) = finite_difference_error(&mut net, &mut rng);
            prop_assert_eq!(bad, 0);
        }
    }
}
