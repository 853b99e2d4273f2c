//! MC-Dropout sampling on a split pipeline: a deterministic prefix of dense
//! layers followed by a short head with dropout. The cached sampler runs the
//! prefix once and only re-samples the head.
//!
//! Every pass `j` draws its dropout masks from its own ChaCha8 stream
//! (`seed`, stream `j`), so naive and cached sampling see identical masks and
//! produce bitwise identical outputs.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use thiserror::Error;

pub type Tensor = Array2<f32>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("dropout rate {0} must lie in [0, 1)")]
    Rate(f32),
    #[error("sample count must be at least 1")]
    ZeroSamples,
    #[error("head has no dropout point")]
    NoDropout,
    #[error("dropout placement {index} is outside a head of {depth} layers")]
    Placement { index: usize, depth: usize },
    #[error("{what} must be at least {min}, got {value}")]
    TooSmall {
        what: &'static str,
        min: usize,
        value: usize,
    },
    #[error("input has {found} features, pipeline expects {expected}")]
    InputShape { expected: usize, found: usize },
}

/// Keep-probability resolution of the dropout masks.
const MASK_LEVELS: u32 = 1 << 16;

/// Dense layer `y = x·W + b`, optionally followed by ReLU.
#[derive(Debug, Clone)]
pub struct Dense {
    weights: Array2<f32>,
    bias: Array1<f32>,
    relu: bool,
}

impl Dense {
    /// He-initialized layer.
    pub fn random(fan_in: usize, fan_out: usize, relu: bool, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("finite std");
        let weights = Array2::from_shape_fn((fan_in, fan_out), |_| normal.sample(rng));
        let bias = Array1::from_shape_fn(fan_out, |_| rng.random_range(-0.01f32..0.01));
        Self { weights, bias, relu }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut y = x.dot(&self.weights);
        y += &self.bias;
        if self.relu {
            y.mapv_inplace(|v| v.max(0.0));
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutSpec {
    pub rate: f32,
    /// Head layers that are preceded by a dropout point.
    pub placement: Vec<usize>,
}

impl DropoutSpec {
    pub fn validate(&self, head_depth: usize) -> Result<(), SamplerError> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(SamplerError::Rate(self.rate));
        }
        if self.placement.is_empty() {
            return Err(SamplerError::NoDropout);
        }
        if let Some(&index) = self.placement.iter().find(|&&i| i >= head_depth) {
            return Err(SamplerError::Placement {
                index,
                depth: head_depth,
            });
        }
        Ok(())
    }
}

/// Shape of a randomly initialized benchmark pipeline.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub prefix_depth: usize,
    pub prefix_width: usize,
    pub head_depth: usize,
    pub head_width: usize,
    /// Rows per forward pass.
    pub batch: usize,
    pub dropout_rate: f32,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        for (what, min, value) in [
            ("prefix_depth", 1, self.prefix_depth),
            ("prefix_width", 1, self.prefix_width),
            ("head_depth", 1, self.head_depth),
            ("head_width", 1, self.head_width),
            ("batch", 1, self.batch),
        ] {
            if value < min {
                return Err(SamplerError::TooSmall { what, min, value });
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(SamplerError::Rate(self.dropout_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SplitPipeline {
    prefix: Vec<Dense>,
    head: Vec<Dense>,
    dropout: DropoutSpec,
}

impl SplitPipeline {
    pub fn new(prefix: Vec<Dense>, head: Vec<Dense>, dropout: DropoutSpec) -> Result<Self, SamplerError> {
        if head.is_empty() {
            return Err(SamplerError::TooSmall {
                what: "head_depth",
                min: 1,
                value: 0,
            });
        }
        dropout.validate(head.len())?;
        Ok(Self { prefix, head, dropout })
    }

    /// Prefix of `prefix_depth` square layers; head layers with a dropout
    /// point before each of them.
    pub fn random(cfg: &PipelineConfig) -> Result<Self, SamplerError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let prefix = (0..cfg.prefix_depth)
            .map(|_| Dense::random(cfg.prefix_width, cfg.prefix_width, true, &mut rng))
            .collect();
        let head = (0..cfg.head_depth)
            .map(|i| {
                let fan_in = if i == 0 { cfg.prefix_width } else { cfg.head_width };
                Dense::random(fan_in, cfg.head_width, i + 1 < cfg.head_depth, &mut rng)
            })
            .collect();
        let dropout = DropoutSpec {
            rate: cfg.dropout_rate,
            placement: (0..cfg.head_depth).collect(),
        };
        Self::new(prefix, head, dropout)
    }

    pub fn input_width(&self) -> usize {
        self.prefix.first().unwrap_or(&self.head[0]).fan_in()
    }

    pub fn dropout(&self) -> &DropoutSpec {
        &self.dropout
    }

    fn macs(layers: &[Dense]) -> usize {
        layers.iter().map(|l| l.fan_in() * l.fan_out()).sum()
    }

    /// `(prefix_share, head_share)` by multiply-add count.
    pub fn compute_shares(&self) -> (f64, f64) {
        let p = Self::macs(&self.prefix) as f64;
        let h = Self::macs(&self.head) as f64;
        (p / (p + h), h / (p + h))
    }

    /// Multiply-adds per input row for one full forward pass.
    pub fn macs_per_row(&self) -> usize {
        Self::macs(&self.prefix) + Self::macs(&self.head)
    }

    /// Random input batch with the pipeline's input width.
    pub fn random_input(&self, batch: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((batch, self.input_width()), |_| rng.random_range(-1.0f32..1.0))
    }

    fn check_input(&self, x: &Tensor) -> Result<(), SamplerError> {
        if x.ncols() != self.input_width() {
            return Err(SamplerError::InputShape {
                expected: self.input_width(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn prefix_forward(&self, x: &Tensor) -> Tensor {
        let mut z = x.clone();
        for layer in &self.prefix {
            z = layer.forward(&z);
        }
        z
    }

    /// Head pass with dropout masks drawn from `rng`.
    pub fn head_forward(&self, z: &Tensor, rng: &mut impl RngCore) -> Tensor {
        let mut y = z.clone();
        for (i, layer) in self.head.iter().enumerate() {
            if self.dropout.placement.contains(&i) {
                apply_dropout(&mut y, self.dropout.rate, rng);
            }
            y = layer.forward(&y);
        }
        y
    }

    /// Forward pass with dropout disabled.
    pub fn deterministic_forward(&self, x: &Tensor) -> Tensor {
        let mut y = self.prefix_forward(x);
        for layer in &self.head {
            y = layer.forward(&y);
        }
        y
    }
}

/// Mask stream of pass `pass` under `seed`.
pub fn pass_stream(seed: u64, pass: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pass);
    rng
}

fn apply_dropout(x: &mut Tensor, rate: f32, rng: &mut impl RngCore) {
    if rate == 0.0 {
        return;
    }
    let keep = ((1.0 - rate as f64) * MASK_LEVELS as f64).round() as u32;
    let scale = 1.0 / (1.0 - rate);
    // one little-endian u16 of the stream per element
    let mut bytes = vec![0u8; 2 * x.len()];
    rng.fill_bytes(&mut bytes);
    let draws = bytes.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]]) as u32);
    let apply = |v: &mut f32, u: u32| {
        // branch-free select; a dropped element becomes +0.0
        let kept = ((u < keep) as u32).wrapping_neg();
        *v = f32::from_bits(v.to_bits() & kept) * scale;
    };
    match x.as_slice_mut() {
        Some(s) => s.iter_mut().zip(draws).for_each(|(v, u)| apply(v, u)),
        None => x.iter_mut().zip(draws).for_each(|(v, u)| apply(v, u)),
    }
}

/// Inverted dropout: each element is kept with probability `1 - rate`
/// (resolved to 1/65536) and scaled by `1 / (1 - rate)`.
pub fn dropout(x: &Tensor, rate: f32, rng: &mut impl RngCore) -> Result<Tensor, SamplerError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(SamplerError::Rate(rate));
    }
    let mut y = x.clone();
    apply_dropout(&mut y, rate, rng);
    Ok(y)
}

/// `n` full forward passes, pass `j` using [`pass_stream`]`(seed, j)`.
pub fn naive_sample(p: &SplitPipeline, x: &Tensor, n: usize, seed: u64) -> Result<Vec<Tensor>, SamplerError> {
    if n == 0 {
        return Err(SamplerError::ZeroSamples);
    }
    p.check_input(x)?;
    Ok((0..n)
        .map(|j| {
            let z = p.prefix_forward(x);
            p.head_forward(&z, &mut pass_stream(seed, j as u64))
        })
        .collect())
}

/// One prefix pass, then `n` head passes over the cached features.
pub fn cached_sample(p: &SplitPipeline, x: &Tensor, n: usize, seed: u64) -> Result<Vec<Tensor>, SamplerError> {
    if n == 0 {
        return Err(SamplerError::ZeroSamples);
    }
    p.check_input(x)?;
    let z = p.prefix_forward(x);
    Ok((0..n)
        .map(|j| p.head_forward(&z, &mut pass_stream(seed, j as u64)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    pub n_samples: usize,
    pub trials: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
}

fn default_warmup() -> usize {
    10
}

pub const MIN_TRIALS: usize = 30;

/// Median per-inference wall-clock times in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub n_samples: usize,
    pub trials: usize,
    pub head_share: f64,
    pub t_det: f64,
    pub t_naive: f64,
    pub t_cached: f64,
    pub t_prefix: f64,
    pub t_head: f64,
    /// Size of the cached feature tensor.
    pub cache_bytes: usize,
    /// Growth of peak resident memory over the run, when the OS reports it.
    pub peak_rss_delta_kib: Option<u64>,
}

impl BenchReport {
    pub fn naive_ratio(&self) -> f64 {
        self.t_naive / self.t_det
    }

    pub fn cached_ratio(&self) -> f64 {
        self.t_cached / self.t_det
    }

    pub fn speedup(&self) -> f64 {
        self.t_naive / self.t_cached
    }

    /// `t_prefix + N · t_head`.
    pub fn cost_model(&self) -> f64 {
        self.t_prefix + self.n_samples as f64 * self.t_head
    }

    pub const CSV_HEADER: &'static str = "n_samples,trials,head_share,t_det_s,t_naive_s,t_cached_s,\
naive_over_det,cached_over_det,naive_over_cached,cost_model_s,cache_bytes,peak_rss_delta_kib";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.9e},{:.9e},{:.9e},{:.4},{:.4},{:.4},{:.9e},{},{}",
            self.n_samples,
            self.trials,
            self.head_share,
            self.t_det,
            self.t_naive,
            self.t_cached,
            self.naive_ratio(),
            self.cached_ratio(),
            self.speedup(),
            self.cost_model(),
            self.cache_bytes,
            self.peak_rss_delta_kib.map_or(String::new(), |v| v.to_string()),
        )
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time<T>(f: impl FnOnce() -> T) -> f64 {
    let start = Instant::now();
    std::hint::black_box(f());
    start.elapsed().as_secs_f64()
}

/// Peak resident set size (VmHWM) in KiB, Linux only.
pub fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

/// Times deterministic, naive and cached inference, interleaved per trial
/// so drift affects all three alike. Runs on the calling thread.
pub fn bench(
    p: &SplitPipeline,
    x: &Tensor,
    n: usize,
    trials: usize,
    warmup: usize,
    seed: u64,
) -> Result<BenchReport, SamplerError> {
    if trials < MIN_TRIALS {
        return Err(SamplerError::TooSmall {
            what: "trials",
            min: MIN_TRIALS,
            value: trials,
        });
    }
    if n == 0 {
        return Err(SamplerError::ZeroSamples);
    }
    p.check_input(x)?;
    let rss_before = peak_rss_kib();
    let z = p.prefix_forward(x);
    let cache_bytes = z.len() * std::mem::size_of::<f32>();

    let mut samples: [Vec<f64>; 5] = Default::default();
    for t in 0..warmup + trials {
        let s = seed.wrapping_add(t as u64);
        let run = [
            time(|| p.deterministic_forward(x)),
            time(|| naive_sample(p, x, n, s)),
            time(|| cached_sample(p, x, n, s)),
            time(|| p.prefix_forward(x)),
            time(|| p.head_forward(&z, &mut pass_stream(s, 0))),
        ];
        if t >= warmup {
            for (acc, v) in samples.iter_mut().zip(run) {
                acc.push(v);
            }
        }
    }
    let [det, naive, cached, prefix, head] = samples.map(median);
    let peak_rss_delta_kib = match (rss_before, peak_rss_kib()) {
        (Some(a), Some(b)) => Some(b.saturating_sub(a)),
        _ => None,
    };
    Ok(BenchReport {
        n_samples: n,
        trials,
        head_share: p.compute_shares().1,
        t_det: det,
        t_naive: naive,
        t_cached: cached,
        t_prefix: prefix,
        t_head: head,
        cache_bytes,
        peak_rss_delta_kib,
    })
}

/// Builds the pipeline and input described by `cfg` and benchmarks it.
pub fn bench_config(cfg: &BenchConfig) -> Result<BenchReport, SamplerError> {
    let p = SplitPipeline::random(&cfg.pipeline)?;
    let x = p.random_input(cfg.pipeline.batch, cfg.pipeline.seed ^ 0x5eed);
    bench(&p, &x, cfg.n_samples, cfg.trials, cfg.warmup, cfg.pipeline.seed)
}
