use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::buffer::{ReplayBuffer, Transition};
use super::env::{env_step, State};
use super::policy::{greedy, select_action};
use super::schedule::EpsilonSchedule;
use super::td::{bootstrap_target, QLearningSpec};
use crate::autodiff::{AdamState, Graph};
use crate::error::{Error, Result};
use crate::model::{DqnNetwork, NetworkConfig};
use crate::phantom::{Dataset, LabeledVolume};
use crate::stats::{Evaluation, Prediction};
use crate::util::{derive_seed, write_string};

/// Test images are scored in chunks of this many.
const EVAL_CHUNK: usize = 16;

/// Anything that can score `(image, pred_corr)` states.
pub trait QFunction {
    fn q_values(&self, images: &[&LabeledVolume], pred_corr: &[u8]) -> Result<Vec<[f64; 2]>>;
}

/// A [`QFunction`] that can also learn from replayed transitions.
pub trait QLearner: QFunction {
    /// One optimisation step on `batch`; returns the batch loss.
    fn update(&mut self, batch: &[Transition], images: &[LabeledVolume], gamma: f64) -> Result<f64>;
}

/// Deep-Q network plus its Adam state.
#[derive(Clone, Debug)]
pub struct DqnLearner {
    pub net: DqnNetwork<f32>,
    pub adam: AdamState<f32>,
}

impl DqnLearner {
    pub fn new(net: DqnNetwork<f32>, lr: f64) -> Self {
        Self { net, adam: AdamState::new(lr) }
    }
}

impl QFunction for DqnLearner {
    fn q_values(&self, images: &[&LabeledVolume], pred_corr: &[u8]) -> Result<Vec<[f64; 2]>> {
        let vols: Vec<_> = images.iter().map(|v| &v.volume).collect();
        Ok(self
            .net
            .forward_batch(&vols, pred_corr)?
            .into_iter()
            .map(|q| [q[0] as f64, q[1] as f64])
            .collect())
    }
}

impl QLearner for DqnLearner {
    /// Masked-MSE step against TD(0) targets bootstrapped from the live
    /// network. `s` and `s'` share an image, so the volume features are
    /// computed once and only the `pred_corr` branch and head are evaluated
    /// twice.
    fn update(&mut self, batch: &[Transition], images: &[LabeledVolume], gamma: f64) -> Result<f64> {
        let vols = batch
            .iter()
            .map(|t| {
                images
                    .get(t.image_index)
                    .map(|v| &v.volume)
                    .ok_or_else(|| Error::Lookup(format!("image index {} not in training set", t.image_index)))
            })
            .collect::<Result<Vec<_>>>()?;
        let prev: Vec<u8> = batch.iter().map(|t| t.pred_corr_prev).collect();
        let next: Vec<u8> = batch.iter().map(|t| t.pred_corr_new).collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.action.index()).collect();

        let (loss, grads) = {
            let mut g = Graph::new(self.net.params());
            let x = g.input(self.net.input_batch(&vols)?);
            let features = self.net.features(&mut g, x)?;
            let q_next = self.net.head(&mut g, features, &next)?;
            let targets: Vec<f32> = g
                .value(q_next)
                .data()
                .chunks(2)
                .zip(batch)
                .map(|(q, t)| bootstrap_target(t.reward, t.terminal, q[0].max(q[1]) as f64, gamma) as f32)
                .collect();
            let q = self.net.head(&mut g, features, &prev)?;
            let loss = g.masked_mse(q, &actions, &targets)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Divergence { layer: "loss".into(), detail: format!("batch loss {value}") });
            }
            (value, g.backward(loss)?.into_params())
        };
        let params = self.net.params_mut();
        params.zero_grads();
        params.accumulate(&grads);
        self.adam.step(params)?;
        Ok(loss as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub image_index: usize,
    pub transitions: Vec<Transition>,
    /// Batch losses of the updates made during the episode.
    pub losses: Vec<f64>,
}

impl EpisodeLog {
    pub fn total_reward(&self) -> i32 {
        self.transitions.iter().map(|t| t.reward as i32).sum()
    }

    pub fn mean_reward(&self) -> f64 {
        self.total_reward() as f64 / self.transitions.len().max(1) as f64
    }
}

/// Plays one episode on a uniformly sampled training image.
///
/// Each step: score the state, pick an ε-greedy action, apply the
/// environment, store the transition (the last one is terminal), then run
/// one update if the buffer holds a full batch, and decay ε.
pub fn run_episode<L: QLearner, R: rand::Rng>(
    learner: &mut L,
    images: &[LabeledVolume],
    schedule: &mut EpsilonSchedule,
    spec: &QLearningSpec,
    buffer: &mut ReplayBuffer,
    rng: &mut R,
) -> Result<EpisodeLog> {
    if images.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let image_index = rng.random_range(0..images.len());
    let image = &images[image_index];
    let mut state = State::initial(image_index);
    let mut log = EpisodeLog { image_index, transitions: Vec::with_capacity(spec.steps_per_episode), losses: Vec::new() };

    for step in 0..spec.steps_per_episode {
        let q = learner.q_values(&[image], &[state.pred_corr])?[0];
        let action = select_action(q, schedule.value(), rng);
        let (reward, pred_corr_new) = env_step(image.label, action);
        let t = Transition {
            pred_corr_prev: state.pred_corr,
            image_index,
            action,
            reward,
            pred_corr_new,
            terminal: step + 1 == spec.steps_per_episode,
        };
        buffer.push(t);
        log.transitions.push(t);
        if let Some(batch) = buffer.sample(spec.batch, rng) {
            let loss = learner.update(&batch, images, spec.gamma)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { layer: "loss".into(), detail: format!("loss {loss} at step {step}") });
            }
            log.losses.push(loss);
        }
        schedule.decay();
        state.pred_corr = pred_corr_new;
    }
    Ok(log)
}

/// Greedy prediction from the initial state `(image, pred_corr = 0)` for
/// every test image. Touches no buffer, schedule or parameters.
pub fn evaluate_testset<Q: QFunction + ?Sized>(q: &Q, test: &[LabeledVolume]) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }
    let mut predictions = Vec::with_capacity(test.len());
    for chunk in test.chunks(EVAL_CHUNK) {
        let refs: Vec<&LabeledVolume> = chunk.iter().collect();
        let qs = q.q_values(&refs, &vec![0; chunk.len()])?;
        for (v, qv) in chunk.iter().zip(qs) {
            predictions.push(Prediction { id: v.id.clone(), label: v.label, prediction: greedy(qv).predicted_label() });
        }
    }
    Ok(Evaluation::new(predictions))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub episode: usize,
    pub epsilon: f64,
    pub mean_train_reward: f64,
    pub test_accuracy: Option<f64>,
}

pub const METRICS_HEADER: &str = "episode,epsilon,mean_train_reward,test_accuracy";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let acc = r.test_accuracy.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", r.episode, r.epsilon, r.mean_train_reward, acc);
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_string(path, &metrics_csv(rows))
}

/// Parses a metrics CSV back into rows.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(METRICS_HEADER) {
        return Err(Error::invalid(format!("metrics CSV must start with {METRICS_HEADER:?}")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::invalid(format!("metrics CSV line {}: {line:?}", i + 2));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(bad());
            }
            Ok(MetricsRow {
                episode: cols[0].parse().map_err(|_| bad())?,
                epsilon: cols[1].parse().map_err(|_| bad())?,
                mean_train_reward: cols[2].parse().map_err(|_| bad())?,
                test_accuracy: if cols[3].is_empty() { None } else { Some(cols[3].parse().map_err(|_| bad())?) },
            })
        })
        .collect()
}

pub struct RlOutcome {
    pub learner: DqnLearner,
    pub metrics: Vec<MetricsRow>,
    pub final_eval: Evaluation,
    pub buffer: ReplayBuffer,
}

/// Full training run; deterministic for a given `seed`.
///
/// Every `spec.test_every` episodes, and after the last one, the test set
/// is evaluated and the accuracy recorded on that episode's row.
pub fn train_rl(dataset: &Dataset, spec: &QLearningSpec, seed: u64) -> Result<RlOutcome> {
    let dims = dataset.dims().ok_or_else(|| Error::invalid("dataset is empty"))?;
    train_rl_with(dataset, spec, &NetworkConfig::standard(dims), seed, |_| {})
}

/// [`train_rl`] with an explicit architecture and a per-episode callback.
pub fn train_rl_with(
    dataset: &Dataset,
    spec: &QLearningSpec,
    config: &NetworkConfig,
    seed: u64,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<RlOutcome> {
    spec.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::invalid("dataset has no training images"));
    }
    if dataset.test.is_empty() {
        return Err(Error::invalid("dataset has no test images"));
    }
    let net = DqnNetwork::new(config.clone(), derive_seed(seed, "dqn-init"))?;
    let mut learner = DqnLearner::new(net, spec.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "rl"));
    let mut schedule = spec.epsilon.clone();
    let mut buffer = ReplayBuffer::new(spec.buffer_capacity);
    let mut metrics = Vec::with_capacity(spec.episodes);
    let mut final_eval = None;

    for episode in 1..=spec.episodes {
        let log = run_episode(&mut learner, &dataset.train, &mut schedule, spec, &mut buffer, &mut rng)?;
        let evaluate = episode % spec.test_every == 0 || episode == spec.episodes;
        let test_accuracy = if evaluate {
            let eval = evaluate_testset(&learner, &dataset.test)?;
            let acc = eval.accuracy;
            final_eval = Some(eval);
            Some(acc)
        } else {
            None
        };
        let row = MetricsRow { episode, epsilon: schedule.value(), mean_train_reward: log.mean_reward(), test_accuracy };
        on_row(&row);
        metrics.push(row);
    }
    let final_eval = match final_eval {
        Some(e) => e,
        None => evaluate_testset(&learner, &dataset.test)?,
    };
    Ok(RlOutcome { learner, metrics, final_eval, buffer })
}

/// Q function that always prefers `truth(image)` (or its opposite).
#[doc(hidden)]
pub struct OracleQ {
    pub inverted: bool,
}

impl QFunction for OracleQ {
    fn q_values(&self, images: &[&LabeledVolume], _pred_corr: &[u8]) -> Result<Vec<[f64; 2]>> {
        Ok(images
            .iter()
            .map(|v| {
                let favoured = if self.inverted { 1 - v.label.as_index() } else { v.label.as_index() };
                let mut q = [0.0; 2];
                q[favoured] = 1.0;
                q
            })
            .collect())
    }
}

impl QLearner for OracleQ {
    fn update(&mut self, _batch: &[Transition], _images: &[LabeledVolume], _gamma: f64) -> Result<f64> {
        Ok(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Conv3dSpec;
    use crate::phantom::{Label, Split, Volume};
    use crate::rl::{td_target, Action};

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            input_dims: [8, 8, 6],
            conv: vec![
                Conv3dSpec::new(1, 3).with_geometry([3; 3], [2; 3], [1; 3]),
                Conv3dSpec::new(3, 4).with_geometry([3; 3], [2; 3], [1; 3]),
            ],
            hidden: vec![10, 8, 6],
            branch_width: 6,
        }
    }

    fn images(n: usize, split: Split) -> Vec<LabeledVolume> {
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Normal } else { Label::Tumor };
                let level = if label == Label::Tumor { 0.8 } else { 0.2 };
                let voxels = (0..8 * 8 * 6).map(|j| level + 0.01 * ((i * 31 + j * 7) % 11) as f32).collect();
                LabeledVolume { id: format!("v{i:03}"), volume: Volume::new([8, 8, 6], voxels).unwrap(), label, split }
            })
            .collect()
    }

    struct ConstantQ;

    impl QFunction for ConstantQ {
        fn q_values(&self, images: &[&LabeledVolume], _: &[u8]) -> Result<Vec<[f64; 2]>> {
            Ok(vec![[1.0, 0.0]; images.len()])
        }
    }

    fn greedy_spec() -> QLearningSpec {
        QLearningSpec { epsilon: EpsilonSchedule::new(0.0, 0.0, 0.0), ..QLearningSpec::default() }
    }

    #[test]
    fn oracle_collects_full_reward() {
        let imgs = images(6, Split::Train);
        let spec = greedy_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for inverted in [false, true] {
            let mut buf = ReplayBuffer::new(100);
            let mut schedule = spec.epsilon.clone();
            let log = run_episode(&mut OracleQ { inverted }, &imgs, &mut schedule, &spec, &mut buf, &mut rng).unwrap();
            assert_eq!(log.total_reward(), if inverted { -5 } else { 5 });
            assert_eq!(log.transitions.iter().filter(|t| t.terminal).count(), 1);
            assert!(log.transitions[4].terminal);
            assert_eq!(buf.len(), 5);
            assert_eq!(schedule.decay_count(), 5);
        }
    }

    #[test]
    fn episode_transitions_chain_pred_corr() {
        let imgs = images(4, Split::Train);
        let spec = QLearningSpec { epsilon: EpsilonSchedule::new(1.0, 0.0, 1.0), ..QLearningSpec::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut buf = ReplayBuffer::new(100);
        let mut schedule = spec.epsilon.clone();
        let log = run_episode(&mut OracleQ { inverted: false }, &imgs, &mut schedule, &spec, &mut buf, &mut rng).unwrap();
        assert_eq!(log.transitions[0].pred_corr_prev, 0);
        for w in log.transitions.windows(2) {
            assert_eq!(w[0].pred_corr_new, w[1].pred_corr_prev);
        }
        for t in &log.transitions {
            let label = imgs[t.image_index].label;
            assert_eq!(t.reward == 1, t.action.predicted_label() == label);
            assert_eq!(t.pred_corr_new, (t.reward == 1) as u8);
        }
    }

    #[test]
    fn constant_normal_scores_majority_fraction() {
        let mut test = Vec::new();
        for i in 0..61 {
            let label = if i < 40 { Label::Normal } else { Label::Tumor };
            test.push(LabeledVolume { id: format!("t{i}"), volume: Volume::zeros([2, 2, 2]), label, split: Split::Test });
        }
        let eval = evaluate_testset(&ConstantQ, &test).unwrap();
        assert_eq!(eval.predictions.len(), 61);
        assert!((eval.accuracy - 40.0 / 61.0).abs() < 1e-12);
        assert!(eval.predictions.iter().all(|p| p.prediction == Label::Normal));
    }

    #[test]
    fn evaluation_has_no_side_effects() {
        let test = images(5, Split::Test);
        let net = DqnNetwork::<f32>::new(tiny_config(), 3).unwrap();
        let learner = DqnLearner::new(net, 1e-3);
        let before = learner.net.params().clone();
        let a = evaluate_testset(&learner, &test).unwrap();
        let b = evaluate_testset(&learner, &test).unwrap();
        assert_eq!(a, b);
        assert_eq!(learner.adam.step_count(), 0);
        for (p, q) in before.iter().zip(learner.net.params().iter()) {
            assert_eq!(p.tensor.data(), q.tensor.data());
        }
    }

    #[test]
    fn batched_targets_match_reference() {
        let imgs = images(4, Split::Train);
        let net = DqnNetwork::<f32>::new(tiny_config(), 5).unwrap();
        let spec = QLearningSpec::default();
        let batch: Vec<Transition> = (0..8)
            .map(|i| Transition {
                pred_corr_prev: (i % 2) as u8,
                image_index: i % 4,
                action: Action::from_index(i / 4),
                reward: if i % 3 == 0 { 1 } else { -1 },
                pred_corr_new: ((i + 1) % 2) as u8,
                terminal: i == 7,
            })
            .collect();

        // Loss from the reference per-transition path.
        let mut expected = 0.0;
        for t in &batch {
            let y = td_target(t, &net, &spec, &imgs).unwrap();
            let q = net.forward(&imgs[t.image_index].volume, t.pred_corr_prev).unwrap();
            expected += (q[t.action.index()] as f64 - y).powi(2);
        }
        expected /= batch.len() as f64;

        let mut learner = DqnLearner::new(net, 1e-3);
        let loss = learner.update(&batch, &imgs, spec.gamma).unwrap();
        assert!((loss - expected).abs() < 1e-4 * expected.max(1.0), "{loss} vs {expected}");
        assert_eq!(learner.adam.step_count(), 1);
    }

    #[test]
    fn repeated_updates_fit_fixed_targets() {
        let imgs = images(4, Split::Train);
        let net = DqnNetwork::<f32>::new(tiny_config(), 11).unwrap();
        let mut learner = DqnLearner::new(net, 1e-2);
        let batch: Vec<Transition> = (0..4)
            .map(|i| Transition {
                pred_corr_prev: 0,
                image_index: i,
                action: Action::from_index(i % 2),
                reward: 1,
                pred_corr_new: 1,
                terminal: true,
            })
            .collect();
        let first = learner.update(&batch, &imgs, 0.99).unwrap();
        let mut last = first;
        for _ in 0..200 {
            last = learner.update(&batch, &imgs, 0.99).unwrap();
        }
        assert!(last < 0.05 * first, "{first} -> {last}");
    }

    #[test]
    fn missing_image_is_reported() {
        let imgs = images(2, Split::Train);
        let mut learner = DqnLearner::new(DqnNetwork::<f32>::new(tiny_config(), 1).unwrap(), 1e-3);
        let t = Transition {
            pred_corr_prev: 0,
            image_index: 7,
            action: Action::PredictNormal,
            reward: 1,
            pred_corr_new: 1,
            terminal: false,
        };
        assert!(matches!(learner.update(&[t], &imgs, 0.99), Err(Error::Lookup(_))));
    }

    #[test]
    fn training_rows_and_determinism() {
        let mut all = images(8, Split::Train);
        all.extend(images(4, Split::Test));
        let ds = Dataset::from_volumes(all);
        let spec = QLearningSpec { episodes: 23, batch: 4, test_every: 10, ..QLearningSpec::default() };
        let mut seen = 0;
        let a = train_rl_with(&ds, &spec, &tiny_config(), 42, |_| seen += 1).unwrap();
        assert_eq!(seen, 23);
        let evaluated: Vec<usize> =
            a.metrics.iter().filter(|r| r.test_accuracy.is_some()).map(|r| r.episode).collect();
        assert_eq!(evaluated, vec![10, 20, 23]);
        assert_eq!(a.buffer.len(), 23 * 5);
        assert!((a.metrics[22].epsilon - (0.7 - 115.0 * 1e-4)).abs() < 1e-12);
        assert_eq!(a.metrics[22].test_accuracy, Some(a.final_eval.accuracy));

        let b = train_rl_with(&ds, &spec, &tiny_config(), 42, |_| {}).unwrap();
        assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
        for (p, q) in a.learner.net.params().iter().zip(b.learner.net.params().iter()) {
            assert_eq!(p.tensor.data(), q.tensor.data());
        }
    }

    #[test]
    fn metrics_csv_roundtrip() {
        let rows = vec![
            MetricsRow { episode: 1, epsilon: 0.6995, mean_train_reward: -0.2, test_accuracy: None },
            MetricsRow { episode: 10, epsilon: 0.695, mean_train_reward: 0.6, test_accuracy: Some(0.75) },
        ];
        let text = metrics_csv(&rows);
        assert!(text.starts_with("episode,epsilon,mean_train_reward,test_accuracy\n1,0.6995,-0.2,\n"));
        assert_eq!(parse_metrics_csv(&text).unwrap(), rows);
        assert!(parse_metrics_csv("a,b\n").is_err());
    }
}
