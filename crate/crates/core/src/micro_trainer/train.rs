use super::{adam_step, flatten_grads, AdamState, Network, TrainerError};
use crate::arch_ir::{HeadInput, ModelSpec, OpSpec, TensorShape};
use crate::datagen::{
    generate_dataset, read_sample, CosmoLabel, DatasetJob, DatasetManifest, DensityGrid, LabelRanges, SimConfig,
};
use std::path::Path;
use crate::rng::SplitMix64;
use std::collections::BTreeSet;

pub type TrainSample = (DensityGrid, CosmoLabel);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 3e-3,
            batch_size: 8,
            seed: 0,
        }
    }
}

/// Two strided convolutions and a small dense head. The first dense layer
/// takes whatever the flattened conv output is for the input side.
pub fn tiny_conv_net() -> ModelSpec {
    ModelSpec {
        stem: vec![
            OpSpec::conv3d(3, 2, 4, true),
            OpSpec::leaky_relu(),
            OpSpec::conv3d(3, 2, 8, true),
            OpSpec::leaky_relu(),
        ],
        cells: vec![],
        reduction_positions: BTreeSet::new(),
        channel_width: 4,
        head_input: HeadInput::Flatten,
        head: vec![OpSpec::dense(16, true), OpSpec::leaky_relu(), OpSpec::dense(3, true)],
    }
}

/// Reads every sample listed in a dataset manifest.
pub fn load_samples(dir: &Path) -> Result<(DatasetManifest, Vec<TrainSample>), TrainerError> {
    let data_err = |e: crate::datagen::DatagenError| TrainerError::Data(e.to_string());
    let manifest = DatasetManifest::load(dir).map_err(data_err)?;
    let samples = manifest
        .records
        .iter()
        .map(|r| read_sample(&dir.join(&r.path)).map(|s| (s.grid, s.label)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(data_err)?;
    Ok((manifest, samples))
}

/// Generates 4 simulations on a 32^3 grid (32 sub-volumes of 16^3) into
/// `dir` and loads them.
pub fn desk_training_set(dir: &Path, seed: u64) -> Result<(DatasetManifest, Vec<TrainSample>), TrainerError> {
    let job = DatasetJob {
        config: SimConfig::with_grid(32, 32),
        ..DatasetJob::new(4, 4, dir, seed)
    };
    generate_dataset(&job).map_err(|e| TrainerError::Data(e.to_string()))?;
    load_samples(dir)
}

fn sample_loss(net: &mut Network, grid: &DensityGrid, target: &[f64; 3]) -> Result<(f64, Vec<f64>), TrainerError> {
    let (y, _) = net.forward_counted(&grid.values)?;
    let diff: Vec<f64> = y.iter().zip(target).map(|(a, b)| a - b).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / 3.0;
    // d(loss)/dy
    let upstream = diff.iter().map(|d| 2.0 * d / 3.0).collect();
    Ok((loss, upstream))
}

fn dataset_loss(net: &mut Network, data: &[TrainSample], ranges: &LabelRanges) -> Result<f64, TrainerError> {
    let mut total = 0.0;
    for (grid, label) in data {
        total += sample_loss(net, grid, &ranges.normalize(label))?.0;
    }
    Ok(total / data.len() as f64)
}

/// Minibatch Adam on MSE over min-max scaled labels. The trace holds the
/// full-dataset loss before training followed by one value per epoch.
pub fn train_tiny(
    model: &ModelSpec,
    data: &[TrainSample],
    ranges: &LabelRanges,
    config: &TrainConfig,
) -> Result<Vec<f64>, TrainerError> {
    let first = data.first().ok_or(TrainerError::EmptyDataset)?;
    let mut net = Network::new(model, &TensorShape::cube(1, first.0.d), config.seed)?;
    if net.output_len() != 3 {
        return Err(TrainerError::BadOutputWidth(net.output_len()));
    }
    let mut rng = SplitMix64::new(config.seed ^ 0x5348_5546); // shuffle stream
    let mut state = AdamState::new(net.param_count(), config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = config.batch_size.max(1);
    let mut trace = vec![dataset_loss(&mut net, data, ranges)?];
    for _ in 0..config.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i as u64 + 1) as usize);
        }
        for chunk in order.chunks(batch) {
            let mut grad = vec![0.0; net.param_count()];
            for &i in chunk {
                let (grid, label) = &data[i];
                let (_, upstream) = sample_loss(&mut net, grid, &ranges.normalize(label))?;
                let (g, _, _) = net.backward_counted(&upstream)?;
                for (acc, v) in grad.iter_mut().zip(flatten_grads(&g)) {
                    *acc += v / chunk.len() as f64;
                }
            }
            let mut params = net.params();
            adam_step(&mut params, &grad, &mut state)?;
            net.set_params(&params)?;
        }
        trace.push(dataset_loss(&mut net, data, ranges)?);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_data(n: usize, d: usize) -> Vec<TrainSample> {
        let ranges = LabelRanges::default();
        let mut rng = SplitMix64::new(1);
        (0..n as u64)
            .map(|i| {
                let label = crate::datagen::sample_label(&ranges, 3, i);
                let values = (0..d * d * d).map(|_| label.sigma8 + 0.1 * rng.normal()).collect();
                (DensityGrid { d, values }, label)
            })
            .collect()
    }

    #[test]
    fn zero_rate_is_flat() {
        let data = toy_data(4, 8);
        let cfg = TrainConfig { epochs: 3, learning_rate: 0.0, ..Default::default() };
        let trace = train_tiny(&tiny_conv_net(), &data, &LabelRanges::default(), &cfg).unwrap();
        assert_eq!(trace.len(), 4);
        assert!(trace.iter().all(|&l| l == trace[0]));
    }

    #[test]
    fn same_seed_same_trace() {
        let data = toy_data(6, 8);
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        let r = LabelRanges::default();
        let a = train_tiny(&tiny_conv_net(), &data, &r, &cfg).unwrap();
        let b = train_tiny(&tiny_conv_net(), &data, &r, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.last().unwrap() < &a[0]);
    }

    #[test]
    fn desk_samples_halve_loss() {
        let dir = tempfile::tempdir().unwrap();
        let (m, data) = desk_training_set(dir.path(), 0).unwrap();
        assert_eq!(data.len(), 32);
        assert!(data.iter().all(|(g, _)| g.d == 16));
        let trace = train_tiny(&tiny_conv_net(), &data, &m.ranges, &TrainConfig::default()).unwrap();
        assert_eq!(trace.len(), 51);
        assert!(trace[50] < 0.5 * trace[0], "{trace:?}");
    }

    #[test]
    fn empty_and_bad_width() {
        let r = LabelRanges::default();
        let cfg = TrainConfig::default();
        assert_eq!(train_tiny(&tiny_conv_net(), &[], &r, &cfg), Err(TrainerError::EmptyDataset));
        let mut m = tiny_conv_net();
        m.head.pop();
        assert_eq!(train_tiny(&m, &toy_data(1, 8), &r, &cfg), Err(TrainerError::BadOutputWidth(16)));
    }
}
