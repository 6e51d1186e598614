use crate::error::Result;

use super::NetworkSpec;

/// Multiply-accumulate counts accumulated by an instrumented forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub per_layer: Vec<u64>,
    pub total: u64,
}

/// Closed-form cost of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub params: u64,
    /// `|Y_l|`: pre-sampling output elements over all neurons of the layer.
    pub outputs: u64,
    pub macs: u64,
}

/// `sum_l N_l (N_{l-1} kx ky Q + 1)`, the `+1` dropped for bias-free layers.
pub fn count_params(spec: &NetworkSpec) -> Result<u64> {
    spec.shapes()?;
    Ok(spec
        .layers
        .iter()
        .enumerate()
        .map(|(l, ls)| {
            let fan = (spec.input_count(l) * ls.kernel.0 * ls.kernel.1 * ls.q_order) as u64;
            ls.neurons as u64 * (fan + ls.bias as u64)
        })
        .sum())
}

/// Per-layer costs: `MACs(l) = |Y_l| (N_{l-1} kx ky Q + 1)` with
/// `|Y_l| = N_l * conv_h * conv_w`; the bias term is dropped for bias-free layers.
pub fn count_macs(spec: &NetworkSpec) -> Result<Vec<LayerCost>> {
    let shapes = spec.shapes()?;
    Ok(spec
        .layers
        .iter()
        .zip(&shapes)
        .enumerate()
        .map(|(l, (ls, sh))| {
            let fan = (spec.input_count(l) * ls.kernel.0 * ls.kernel.1 * ls.q_order) as u64;
            let outputs = (ls.neurons * sh.conv.0 * sh.conv.1) as u64;
            LayerCost {
                params: ls.neurons as u64 * (fan + ls.bias as u64),
                outputs,
                macs: outputs * (fan + ls.bias as u64),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{InitRule, LayerSpec, Network, Path, Sampling};
    use crate::tensor::FeatureMap;
    use proptest::prelude::*;

    #[test]
    fn params_small_cases() {
        let one = NetworkSpec::new(1, 1, vec![LayerSpec::convolutional(1, 1)]);
        assert_eq!(count_params(&one).unwrap(), 2);
        let six = NetworkSpec::new(5, 5, vec![LayerSpec::generative(6, 3, 7)]);
        assert_eq!(count_params(&six).unwrap(), 384);
        // CNN: sum N_l (N_{l-1} k^2 + 1)
        let cnn = NetworkSpec::new(
            20,
            20,
            vec![LayerSpec::convolutional(6, 3), LayerSpec::convolutional(10, 3), LayerSpec::convolutional(1, 3)],
        );
        assert_eq!(count_params(&cnn).unwrap(), 6 * 10 + 10 * 55 + 91);
    }

    #[test]
    fn macs_small_cases() {
        let one = NetworkSpec::new(1, 1, vec![LayerSpec::convolutional(1, 1)]);
        assert_eq!(count_macs(&one).unwrap()[0].macs, 2);
        let mut nb = LayerSpec::convolutional(1, 1);
        nb.bias = false;
        let nb = NetworkSpec::new(1, 1, vec![nb]);
        assert_eq!(count_macs(&nb).unwrap()[0].macs, 1);
        assert_eq!(count_params(&nb).unwrap(), 1);
        // standard CNN: outputs * (C_in k^2 + 1)
        let cnn = NetworkSpec::new(10, 10, vec![LayerSpec::convolutional(4, 3)]);
        assert_eq!(count_macs(&cnn).unwrap()[0].macs, 4 * 64 * 10);
    }

    fn check_instrumented(spec: NetworkSpec, path: Path, seed: u64) {
        let net = Network::<f64>::init(spec.clone(), seed, InitRule::Glorot).unwrap();
        let input: Vec<FeatureMap> = (0..spec.input_channels)
            .map(|c| FeatureMap::from_fn(spec.input_height, spec.input_width, |m, n| {
                (((m * 7 + n * 3 + c) % 11) as f64 / 11.0) - 0.5
            }))
            .collect();
        let mut counter = OpCounter::default();
        net.forward_with(&input, path, Some(&mut counter)).unwrap();
        let costs = count_macs(&spec).unwrap();
        let formula: Vec<u64> = costs.iter().map(|c| c.macs).collect();
        assert_eq!(counter.per_layer, formula);
        assert_eq!(counter.total, formula.iter().sum::<u64>());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn formula_matches_instrumented_forward(
            n1 in 1usize..4, n2 in 1usize..4, k in 1usize..4, q in 1usize..5,
            c in 1usize..3, sample in 0usize..3, bias in any::<bool>(), seed in 0u64..1000,
        ) {
            let sampling = [Sampling::None, Sampling::Down(2, 2), Sampling::Up(2, 2)][sample];
            let mut l1 = LayerSpec::generative(n1, k, q).with_sampling(sampling);
            l1.bias = bias;
            let l2 = LayerSpec::generative(n2, k, q);
            let layers = [l1.clone(), l2.clone()];
            let (h, w) = (4..6)
                .find_map(|o| crate::network::required_input_size(&layers, (o, o)))
                .unwrap();
            let mut spec = NetworkSpec::new(h, w, vec![l1, l2]);
            spec.input_channels = c;
            check_instrumented(spec.clone(), Path::Auto, seed);
            check_instrumented(spec, Path::Generic, seed);
        }
    }
}
