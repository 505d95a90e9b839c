//! Training of enhancement networks: Xavier initialization, backpropagation through
//! time, Adam, early stopping on validation MSE.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::NormStats;
use crate::nn::{dense_step, gru_step, Activation, GruStep, Layer, LayerKind, ModelSpec, NetworkWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Utterances per update.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Steps per truncated-BPTT window; 0 backpropagates through the whole sequence.
    pub bptt_truncation: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            max_epochs: 100,
            patience: 5,
            bptt_truncation: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.batch_size >= 1
            && self.patience >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration {self:?}")))
        }
    }
}

/// Input and target sequences of one utterance, frame-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePair {
    pub input: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
}

impl SequencePair {
    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    fn check(&self, spec: &ModelSpec) -> Result<()> {
        if self.input.len() != self.target.len() {
            return Err(Error::Length(self.input.len(), self.target.len()));
        }
        for (x, y) in self.input.iter().zip(&self.target) {
            if x.len() != spec.input_dim() {
                return Err(Error::Dimension { expected: spec.input_dim(), actual: x.len() });
            }
            if y.len() != spec.output_dim() {
                return Err(Error::Dimension { expected: spec.output_dim(), actual: y.len() });
            }
        }
        Ok(())
    }
}

/// Uniform weights in ±sqrt(6 / (fan_in + fan_out)) per weight block, zero biases.
/// Each GRU gate is a separate block with fan-in `input + units` and fan-out `units`.
pub fn xavier_init(spec: &ModelSpec, seed: u64) -> NetworkWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = NetworkWeights::zeros(spec.clone());
    for (l, p) in spec.layers.iter().zip(&mut net.layers) {
        let (fan_in, fan_out) = match l.kind {
            LayerKind::Gru => (l.input_dim + l.output_dim, l.output_dim),
            _ => (l.input_dim, l.output_dim),
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in &mut p.w {
            *w = rng.random_range(-limit..limit);
        }
    }
    net
}

/// Mean squared error over all steps and dimensions.
pub fn mse_loss(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Length(pred.len(), target.len()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(target) {
        if p.len() != t.len() {
            return Err(Error::Dimension { expected: t.len(), actual: p.len() });
        }
        sum += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += p.len();
    }
    if count == 0 {
        return Err(Error::Empty("no values to compare".into()));
    }
    Ok(sum / count as f64)
}

/// Parameter-shaped accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &NetworkWeights) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Layer { w: vec![0.0; l.w.len()], b: vec![0.0; l.b.len()] }).collect(),
        }
    }

    fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.w.iter_mut().zip(&b.w).chain(a.b.iter_mut().zip(&b.b)) {
                *x += scale * y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers.iter().flat_map(|l| l.w.iter().chain(&l.b)).fold(0.0, |m, v| m.max(v.abs()))
    }
}

enum StepCache {
    Gru { h_prev: Vec<f64>, step: GruStep },
    Dense { y: Vec<f64> },
}

/// `g[i, col0 + j] += d[i]·x[j]`
fn outer_acc(g: &mut [f64], stride: usize, col0: usize, d: &[f64], x: &[f64]) {
    for (i, di) in d.iter().enumerate() {
        if *di == 0.0 {
            continue;
        }
        let row = &mut g[i * stride + col0..i * stride + col0 + x.len()];
        for (r, xj) in row.iter_mut().zip(x) {
            *r += di * xj;
        }
    }
}

/// `out[j] += Σ_i w[i, col0 + j]·d[i]`
fn transpose_acc(w: &[f64], stride: usize, col0: usize, d: &[f64], out: &mut [f64]) {
    for (i, di) in d.iter().enumerate() {
        if *di == 0.0 {
            continue;
        }
        let row = &w[i * stride + col0..i * stride + col0 + out.len()];
        for (o, wij) in out.iter_mut().zip(row) {
            *o += di * wij;
        }
    }
}

/// Sum of squared errors of one sequence and its gradient (unnormalized).
fn sequence_sse_gradient(net: &NetworkWeights, pair: &SequencePair, truncation: usize) -> (f64, Gradients) {
    let specs = &net.spec.layers;
    let n_layers = specs.len();
    let steps = pair.len();
    // inputs[l][t]: input of layer l at step t; cache[l][t]: its intermediate values.
    let mut inputs: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(steps); n_layers];
    let mut cache: Vec<Vec<StepCache>> = (0..n_layers).map(|_| Vec::with_capacity(steps)).collect();
    let mut state: Vec<Vec<f64>> = specs.iter().map(|l| vec![0.0; l.output_dim]).collect();
    let mut outputs = Vec::with_capacity(steps);
    for x in &pair.input {
        let mut cur = x.clone();
        for l in 0..n_layers {
            inputs[l].push(cur.clone());
            cur = match specs[l].kind {
                LayerKind::Gru => {
                    let step = gru_step(&specs[l], &net.layers[l], &cur, &state[l]);
                    let h_prev = std::mem::replace(&mut state[l], step.h.clone());
                    let h = step.h.clone();
                    cache[l].push(StepCache::Gru { h_prev, step });
                    h
                }
                _ => {
                    let y = dense_step(&specs[l], &net.layers[l], &cur);
                    cache[l].push(StepCache::Dense { y: y.clone() });
                    y
                }
            };
        }
        outputs.push(cur);
    }

    let mut grads = Gradients::zeros_like(net);
    let mut sse = 0.0;
    let mut dh_next: Vec<Vec<f64>> = specs.iter().map(|l| vec![0.0; l.output_dim]).collect();
    for t in (0..steps).rev() {
        let mut d: Vec<f64> = outputs[t].iter().zip(&pair.target[t]).map(|(y, y0)| 2.0 * (y - y0)).collect();
        sse += outputs[t].iter().zip(&pair.target[t]).map(|(y, y0)| (y - y0) * (y - y0)).sum::<f64>();
        for l in (0..n_layers).rev() {
            let spec = &specs[l];
            let p = &net.layers[l];
            let g = &mut grads.layers[l];
            let x = &inputs[l][t];
            let mut dx = vec![0.0; spec.input_dim];
            match &cache[l][t] {
                StepCache::Dense { y } => {
                    let dpre: Vec<f64> =
                        d.iter().zip(y).map(|(dv, yv)| dv * spec.activation.derivative_from_output(*yv)).collect();
                    outer_acc(&mut g.w, spec.input_dim, 0, &dpre, x);
                    g.b.iter_mut().zip(&dpre).for_each(|(b, v)| *b += v);
                    transpose_acc(&p.w, spec.input_dim, 0, &dpre, &mut dx);
                }
                StepCache::Gru { h_prev, step } => {
                    let n = spec.output_dim;
                    let ni = spec.input_dim;
                    let stride = ni + n;
                    let (wz, rest) = p.w.split_at(n * stride);
                    let (wr, wc) = rest.split_at(n * stride);
                    let dh: Vec<f64> = d.iter().zip(&dh_next[l]).map(|(a, b)| a + b).collect();
                    let GruStep { z, r, cand, .. } = step;
                    let mut dhp: Vec<f64> = (0..n).map(|i| dh[i] * z[i]).collect();
                    let dz_pre: Vec<f64> =
                        (0..n).map(|i| dh[i] * (h_prev[i] - cand[i]) * z[i] * (1.0 - z[i])).collect();
                    let dc_pre: Vec<f64> =
                        (0..n).map(|i| dh[i] * (1.0 - z[i]) * (1.0 - cand[i] * cand[i])).collect();
                    let rh: Vec<f64> = (0..n).map(|i| r[i] * h_prev[i]).collect();

                    let (gz, grest) = g.w.split_at_mut(n * stride);
                    let (gr, gc) = grest.split_at_mut(n * stride);
                    outer_acc(gc, stride, 0, &dc_pre, x);
                    outer_acc(gc, stride, ni, &dc_pre, &rh);
                    let mut drh = vec![0.0; n];
                    transpose_acc(wc, stride, 0, &dc_pre, &mut dx);
                    transpose_acc(wc, stride, ni, &dc_pre, &mut drh);
                    let dr_pre: Vec<f64> = (0..n).map(|i| drh[i] * h_prev[i] * r[i] * (1.0 - r[i])).collect();
                    for i in 0..n {
                        dhp[i] += drh[i] * r[i];
                    }
                    outer_acc(gz, stride, 0, &dz_pre, x);
                    outer_acc(gz, stride, ni, &dz_pre, h_prev);
                    outer_acc(gr, stride, 0, &dr_pre, x);
                    outer_acc(gr, stride, ni, &dr_pre, h_prev);
                    transpose_acc(wz, stride, 0, &dz_pre, &mut dx);
                    transpose_acc(wz, stride, ni, &dz_pre, &mut dhp);
                    transpose_acc(wr, stride, 0, &dr_pre, &mut dx);
                    transpose_acc(wr, stride, ni, &dr_pre, &mut dhp);
                    for i in 0..n {
                        g.b[i] += dz_pre[i];
                        g.b[n + i] += dr_pre[i];
                        g.b[2 * n + i] += dc_pre[i];
                    }
                    if truncation > 0 && t % truncation == 0 {
                        dhp.fill(0.0);
                    }
                    dh_next[l] = dhp;
                }
            }
            d = dx;
        }
    }
    (sse, grads)
}

/// Mean squared error of one sequence and its exact gradient.
pub fn backward_sequence(net: &NetworkWeights, pair: &SequencePair) -> Result<(f64, Gradients)> {
    batch_gradient(net, &[pair], 0)
}

/// Mean squared error over every step and dimension of a batch, and its gradient.
/// Per-utterance work runs in parallel; partial results are summed in batch order.
pub fn batch_gradient(net: &NetworkWeights, batch: &[&SequencePair], truncation: usize) -> Result<(f64, Gradients)> {
    for p in batch {
        p.check(&net.spec)?;
    }
    let count: usize = batch.iter().map(|p| p.len()).sum::<usize>() * net.spec.output_dim();
    if count == 0 {
        return Err(Error::Empty("batch has no frames".into()));
    }
    let parts: Vec<(f64, Gradients)> = batch.par_iter().map(|p| sequence_sse_gradient(net, p, truncation)).collect();
    let mut total = Gradients::zeros_like(net);
    let mut sse = 0.0;
    let scale = 1.0 / count as f64;
    for (s, g) in &parts {
        sse += s;
        total.add_scaled(g, scale);
    }
    Ok((sse * scale, total))
}

/// First and second moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    step: u64,
}

impl AdamState {
    pub fn new(net: &NetworkWeights) -> Self {
        Self { m: Gradients::zeros_like(net), v: Gradients::zeros_like(net), step: 0 }
    }
}

pub fn adam_step(net: &mut NetworkWeights, grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut state.m.layers).zip(&mut state.v.layers) {
        let params = p.w.iter_mut().chain(p.b.iter_mut());
        let gs = g.w.iter().chain(&g.b);
        let ms = m.w.iter_mut().chain(m.b.iter_mut());
        let vs = v.w.iter_mut().chain(v.b.iter_mut());
        for (((p, g), m), v) in params.zip(gs).zip(ms).zip(vs) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Mean squared error of the network over whole sequences.
pub fn evaluate(net: &NetworkWeights, data: &[SequencePair]) -> Result<f64> {
    let parts: Vec<Result<(f64, usize)>> = data
        .par_iter()
        .map(|p| {
            p.check(&net.spec)?;
            let y = net.forward_sequence(&p.input)?;
            let sse: f64 = y.iter().zip(&p.target).flat_map(|(a, b)| a.iter().zip(b)).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok((sse, p.len() * net.spec.output_dim()))
        })
        .collect();
    let (mut sse, mut count) = (0.0, 0usize);
    for part in parts {
        let (s, c) = part?;
        sse += s;
        count += c;
    }
    if count == 0 {
        return Err(Error::Empty("evaluation set has no frames".into()));
    }
    Ok(sse / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub valid_mse: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: NetworkWeights,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

pub fn format_log(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_mse,valid_mse,wall_time\n");
    for e in log {
        out.push_str(&format!("{},{:.8},{:.8},{:.3}\n", e.epoch, e.train_mse, e.valid_mse, e.wall_time_s));
    }
    out
}

/// Batches of similar-length utterances; batch order is shuffled each epoch.
fn make_batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| lengths[i]);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

/// Trains on already-normalized pairs, returning the weights of the best validation epoch.
pub fn train_normalized(
    spec: &ModelSpec,
    train: &[SequencePair],
    valid: &[SequencePair],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Empty("training and validation sets must be non-empty".into()));
    }
    for p in train.iter().chain(valid) {
        p.check(spec)?;
    }
    let mut net = xavier_init(spec, cfg.seed);
    let mut adam = AdamState::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let lengths: Vec<usize> = train.iter().map(SequencePair::len).collect();
    let start = Instant::now();
    let mut log = Vec::new();
    let mut best = (f64::INFINITY, net.clone(), 0);
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        for batch in make_batches(&lengths, cfg.batch_size, &mut rng) {
            let pairs: Vec<&SequencePair> = batch.iter().map(|&i| &train[i]).filter(|p| !p.is_empty()).collect();
            if pairs.is_empty() {
                continue;
            }
            let (_, grads) = batch_gradient(&net, &pairs, cfg.bptt_truncation)?;
            adam_step(&mut net, &grads, &mut adam, cfg);
        }
        let train_mse = evaluate(&net, train)?;
        let valid_mse = evaluate(&net, valid)?;
        info!("epoch {epoch}: train {train_mse:.6} valid {valid_mse:.6}");
        log.push(EpochLog { epoch, train_mse, valid_mse, wall_time_s: start.elapsed().as_secs_f64() });
        if !train_mse.is_finite() {
            return Err(Error::Model(format!("training diverged at epoch {epoch}")));
        }
        if valid_mse < best.0 {
            best = (valid_mse, net.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { weights: best.1, log, best_epoch: best.2 })
}

/// Fits input statistics on the training inputs and output statistics on the training
/// targets, trains on normalized data and embeds both statistics in the result.
/// Networks with a sigmoid output regress bounded targets directly and keep identity
/// output statistics.
pub fn train(spec: &ModelSpec, train: &[SequencePair], valid: &[SequencePair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let inputs: Vec<&Vec<f64>> = train.iter().flat_map(|p| &p.input).collect();
    let targets: Vec<&Vec<f64>> = train.iter().flat_map(|p| &p.target).collect();
    let input_norm = NormStats::fit(&inputs)?;
    let output_norm = if spec.layers.last().map(|l| l.activation) == Some(Activation::Sigmoid) {
        NormStats::identity(spec.output_dim())
    } else {
        NormStats::fit(&targets)?
    };
    let normalize = |set: &[SequencePair]| -> Vec<SequencePair> {
        set.iter()
            .map(|p| SequencePair {
                input: p.input.iter().map(|x| input_norm.apply(x)).collect(),
                target: p.target.iter().map(|y| output_norm.apply(y)).collect(),
            })
            .collect()
    };
    let mut outcome = train_normalized(spec, &normalize(train), &normalize(valid), cfg)?;
    outcome.weights.input_norm = input_norm;
    outcome.weights.output_norm = output_norm;
    Ok(outcome)
}

/// One utterance of paired features: network input (noisy) and target (clean).
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub id: String,
    pub pair: SequencePair,
}

pub const PAIR_MAGIC: &[u8; 4] = b"MPFP";
pub const PAIR_VERSION: u16 = 1;

impl FeaturePair {
    /// Layout (little-endian): magic "MPFP", u16 version, u16 id length, id, u32 dim,
    /// u32 frame count, input frames then target frames as f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.pair.input.first().map_or(0, Vec::len);
        let mut out = Vec::new();
        out.extend_from_slice(PAIR_MAGIC);
        out.extend_from_slice(&PAIR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.id.len() as u16).to_le_bytes());
        out.extend_from_slice(self.id.as_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.pair.len() as u32).to_le_bytes());
        for v in self.pair.input.iter().chain(&self.pair.target).flatten() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("feature pair file: {m}"));
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            let s = bytes.get(*pos..*pos + n).ok_or_else(|| bad("truncated"))?;
            *pos += n;
            Ok(s)
        };
        let mut pos = 0;
        if take(&mut pos, 4)? != PAIR_MAGIC {
            return Err(bad("bad magic"));
        }
        if u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) != PAIR_VERSION {
            return Err(bad("unsupported version"));
        }
        let id_len = usize::from(u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()));
        let id = String::from_utf8(take(&mut pos, id_len)?.to_vec()).map_err(|_| bad("id is not UTF-8"))?;
        let dim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let frames = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        if bytes.len() - pos != 2 * dim * frames * 4 {
            return Err(bad("size does not match header"));
        }
        let mut read = || -> Vec<Vec<f64>> {
            (0..frames)
                .map(|_| {
                    (0..dim)
                        .map(|_| {
                            let v = f32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
                            pos += 4;
                            f64::from(v)
                        })
                        .collect()
                })
                .collect()
        };
        let input = read();
        let target = read();
        Ok(Self { id, pair: SequencePair { input, target } })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Reads a feature manifest: one feature-pair path per line, relative to the manifest's
/// directory unless absolute. Blank lines and `#` comments are skipped.
pub fn read_feature_manifest(path: impl AsRef<Path>) -> Result<Vec<FeaturePair>> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = std::fs::read_to_string(path)?;
    let files: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect();
    if files.is_empty() {
        return Err(Error::Empty(format!("feature manifest {} lists no files", path.display())));
    }
    files.iter().map(FeaturePair::load).collect()
}

pub fn write_feature_manifest(files: &[PathBuf], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for p in files {
        writeln!(f, "{}", p.display())?;
    }
    Ok(())
}

/// Trains from feature manifests.
pub fn train_from_manifests(
    spec: &ModelSpec,
    train_manifest: impl AsRef<Path>,
    valid_manifest: impl AsRef<Path>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let train_set: Vec<SequencePair> = read_feature_manifest(train_manifest)?.into_iter().map(|f| f.pair).collect();
    let valid_set: Vec<SequencePair> = read_feature_manifest(valid_manifest)?.into_iter().map(|f| f.pair).collect();
    train(spec, &train_set, &valid_set, cfg)
}
