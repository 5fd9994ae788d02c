//! Evaluation metrics and synthetic experiment generators.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_knn_graph, Graph};
use crate::model::LsgpModel;
use crate::partition::Partition;

/// One named metric with the parts it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub count: usize,
}

/// `‖C_true − C_est‖_F / ‖C_true‖_F`.
pub fn covariance_discrepancy(c_true: &DMatrix<f64>, c_est: &DMatrix<f64>) -> Result<f64> {
    Ok(covariance_discrepancy_report(c_true, c_est)?.value)
}

pub fn covariance_discrepancy_report(c_true: &DMatrix<f64>, c_est: &DMatrix<f64>) -> Result<MetricReport> {
    if c_true.shape() != c_est.shape() {
        return Err(Error::DimensionMismatch {
            expected: c_true.nrows(),
            got: c_est.nrows(),
            context: "covariance shapes",
        });
    }
    let denominator = c_true.norm();
    if denominator == 0.0 {
        return Err(Error::ZeroReference("true covariance"));
    }
    let numerator = (c_true - c_est).norm();
    Ok(MetricReport {
        name: "CD".into(),
        value: numerator / denominator,
        numerator,
        denominator,
        count: c_true.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorMetrics {
    pub nme: f64,
    pub mae: f64,
    /// `None` when every target is zero.
    pub mape: Option<f64>,
    /// Targets skipped by MAPE because they are zero.
    pub mape_skipped: usize,
    pub count: usize,
    pub error_l2: f64,
    pub target_l2: f64,
}

impl ErrorMetrics {
    pub fn reports(&self) -> Vec<MetricReport> {
        let mut out = vec![
            MetricReport {
                name: "NME".into(),
                value: self.nme,
                numerator: self.error_l2,
                denominator: self.target_l2,
                count: self.count,
            },
            MetricReport {
                name: "MAE".into(),
                value: self.mae,
                numerator: self.mae * self.count as f64,
                denominator: self.count as f64,
                count: self.count,
            },
        ];
        if let Some(mape) = self.mape {
            let used = self.count - self.mape_skipped;
            out.push(MetricReport {
                name: "MAPE".into(),
                value: mape,
                numerator: mape * used as f64,
                denominator: used as f64,
                count: used,
            });
        }
        out
    }
}

/// NME, MAE and MAPE of an estimate of the concatenated missing values.
pub fn error_metrics(z: &DVector<f64>, z_hat: &DVector<f64>) -> Result<ErrorMetrics> {
    if z.len() != z_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            got: z_hat.len(),
            context: "estimate length",
        });
    }
    if z.is_empty() {
        return Err(Error::InvalidArgument("no targets to evaluate".into()));
    }
    let target_l2 = z.norm();
    if target_l2 == 0.0 {
        return Err(Error::ZeroReference("targets for NME"));
    }
    let diff = z - z_hat;
    let error_l2 = diff.norm();
    let count = z.len();
    let mae = diff.iter().map(|d| d.abs()).sum::<f64>() / count as f64;
    let mut ratio_sum = 0.0;
    let mut used = 0usize;
    for (d, t) in diff.iter().zip(z.iter()) {
        if *t != 0.0 {
            ratio_sum += d.abs() / t.abs();
            used += 1;
        }
    }
    Ok(ErrorMetrics {
        nme: error_l2 / target_l2,
        mae,
        mape: (used > 0).then(|| ratio_sum / used as f64),
        mape_skipped: count - used,
        count,
        error_l2,
        target_l2,
    })
}

/// NMI with base-2 logs normalized by the larger partition entropy.
pub fn normalized_mutual_information(a: &Partition, b: &Partition) -> Result<f64> {
    nmi_labels(a.labels(), b.labels())
}

pub fn nmi_labels(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
            context: "partition sizes",
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty partitions".into()));
    }
    let n = a.len() as f64;
    let mut pa: HashMap<usize, f64> = HashMap::new();
    let mut pb: HashMap<usize, f64> = HashMap::new();
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *pa.entry(x).or_default() += 1.0 / n;
        *pb.entry(y).or_default() += 1.0 / n;
        *joint.entry((x, y)).or_default() += 1.0 / n;
    }
    let entropy = |p: &HashMap<usize, f64>| -p.values().map(|v| v * v.log2()).sum::<f64>();
    let (ha, hb) = (entropy(&pa), entropy(&pb));
    let mut keys: Vec<_> = joint.keys().copied().collect();
    keys.sort_unstable();
    let mi: f64 = keys
        .iter()
        .map(|&(x, y)| {
            let pxy = joint[&(x, y)];
            pxy * (pxy / (pa[&x] * pb[&y])).log2()
        })
        .sum();
    let denom = ha.max(hb);
    if denom <= 0.0 {
        return Ok(1.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Compactly supported bump `exp(1/(x^{2n} − 1))` for `|x| < 1`, where
/// `x = (λ − center)/halfwidth`, normalized to unit norm over `freqs`.
pub fn bump_kernel(freqs: &DVector<f64>, center: f64, halfwidth: f64, n: u32) -> Result<DVector<f64>> {
    let raw = bump_values(freqs, center, halfwidth, n)?;
    let norm = raw.norm();
    if norm == 0.0 {
        return Err(Error::EmptySupport { center, halfwidth });
    }
    Ok(raw / norm)
}

/// Unnormalized bump values.
pub fn bump_values(freqs: &DVector<f64>, center: f64, halfwidth: f64, n: u32) -> Result<DVector<f64>> {
    if !(halfwidth > 0.0 && halfwidth.is_finite()) {
        return Err(Error::InvalidArgument(format!("halfwidth must be positive, got {halfwidth}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("bump smoothness must be at least 1".into()));
    }
    Ok(freqs.map(|l| {
        let x = (l - center) / halfwidth;
        let p = x.powi(2 * n as i32);
        if p < 1.0 {
            (1.0 / (p - 1.0)).exp()
        } else {
            0.0
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub center: f64,
    pub halfwidth: f64,
    pub smoothness: u32,
}

/// `k` bumps with centers evenly spaced over `[0, λ_max]`. With `overlap = 0`
/// adjacent supports touch without overlapping; positive values widen every
/// bump by that fraction of the spacing.
pub fn evenly_spaced_bumps(lambda_max: f64, k: usize, overlap: f64) -> Vec<BumpSpec> {
    let spacing = lambda_max / k as f64;
    (0..k)
        .map(|i| BumpSpec {
            center: (i as f64 + 0.5) * spacing,
            halfwidth: 0.5 * spacing * (1.0 + overlap),
            smoothness: 1,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockSpec {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub knn: usize,
    pub inside: f64,
    pub outside: f64,
    /// One bump per block; `None` uses [`evenly_spaced_bumps`] with no overlap.
    pub kernels: Option<Vec<BumpSpec>>,
    pub inter_edges: usize,
    pub seed: u64,
}

impl Default for BlockSpec {
    fn default() -> Self {
        BlockSpec {
            blocks: 5,
            nodes_per_block: 60,
            knn: 7,
            inside: 1.0,
            outside: 0.1,
            kernels: None,
            inter_edges: 45,
            seed: 0,
        }
    }
}

fn uniform_points(count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect()
}

/// k-NN graph on uniform points, redrawing the points until it is connected.
fn connected_knn_graph(n: usize, knn: usize, rng: &mut ChaCha8Rng) -> Result<Graph> {
    let mut last = None;
    for _ in 0..100 {
        match build_knn_graph(&uniform_points(n, rng), knn, None) {
            Err(e @ Error::Disconnected { .. }) => last = Some(e),
            other => return other,
        }
    }
    Err(last.unwrap_or(Error::InvalidArgument("no graph drawn".into())))
}

/// Block graph with a planted model: per-block k-NN graphs joined by random
/// cross edges, memberships `inside` on the own block and `outside` elsewhere,
/// bump kernels.
pub fn synthetic_block_lsgp(spec: &BlockSpec) -> Result<(Arc<Graph>, Partition, LsgpModel)> {
    let (kb, nb) = (spec.blocks, spec.nodes_per_block);
    if kb == 0 || nb < 2 || spec.knn == 0 {
        return Err(Error::InvalidArgument("blocks, nodes_per_block and knn must be positive".into()));
    }
    let n = kb * nb;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut w = DMatrix::zeros(n, n);
    let mut intra_sum = 0.0;
    let mut intra_count = 0usize;
    for b in 0..kb {
        let g = build_knn_graph(&uniform_points(nb, &mut rng), spec.knn, None)?;
        for &(i, j) in g.edges() {
            let (gi, gj) = (b * nb + i, b * nb + j);
            w[(gi, gj)] = g.weight(i, j);
            w[(gj, gi)] = g.weight(i, j);
            intra_sum += g.weight(i, j);
            intra_count += 1;
        }
    }
    let cross = intra_sum / intra_count.max(1) as f64;
    let add_cross = |w: &mut DMatrix<f64>, rng: &mut ChaCha8Rng| loop {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i / nb != j / nb && w[(i, j)] == 0.0 {
            w[(i, j)] = cross;
            w[(j, i)] = cross;
            break;
        }
    };
    if kb > 1 {
        for _ in 0..spec.inter_edges {
            add_cross(&mut w, &mut rng);
        }
    }
    let cap = spec.inter_edges + 10 * kb;
    let mut extra = spec.inter_edges;
    let graph = loop {
        match Graph::from_weights(w.clone()) {
            Ok(g) => break g,
            Err(Error::Disconnected { components }) if extra < cap && kb > 1 => {
                let _ = components;
                add_cross(&mut w, &mut rng);
                extra += 1;
            }
            Err(e) => return Err(e),
        }
    };
    let graph = Arc::new(graph);
    let labels: Vec<usize> = (0..n).map(|v| v / nb).collect();
    let partition = Partition::new(labels, kb)?;

    let freqs = &graph.spectrum().frequencies;
    let lambda_max = freqs[n - 1];
    let kernels = match &spec.kernels {
        Some(k) if k.len() == kb => k.clone(),
        Some(k) => {
            return Err(Error::DimensionMismatch {
                expected: kb,
                got: k.len(),
                context: "kernel specs",
            })
        }
        None => evenly_spaced_bumps(lambda_max, kb, 0.0),
    };
    let mut h = DMatrix::zeros(n, kb);
    for (c, b) in kernels.iter().enumerate() {
        h.set_column(c, &bump_kernel(freqs, b.center, b.halfwidth, b.smoothness)?);
    }
    let g = DMatrix::from_fn(n, kb, |v, c| if v / nb == c { spec.inside } else { spec.outside });
    let model = LsgpModel::new(graph.clone(), g, h)?;
    Ok((graph, partition, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedSpec {
    pub nodes: usize,
    pub knn: usize,
    pub components: usize,
    pub order: usize,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec { nodes: 36, knn: 5, components: 3, order: 4, seed: 0 }
    }
}

/// Random k-NN graph on uniform points in the unit square with a planted
/// polynomial-kernel model.
///
/// Memberships are smooth and positive: white noise low-pass filtered by
/// `exp(−4λ)` and mapped affinely onto `[0.1, 1]`. Polynomial coefficients
/// are standard normal.
pub fn planted_lsgp(spec: &PlantedSpec) -> Result<(Arc<Graph>, LsgpModel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let graph = Arc::new(build_knn_graph(&uniform_points(spec.nodes, &mut rng), spec.knn, None)?);
    let s = graph.spectrum();
    let n = spec.nodes;
    let low = s.frequencies.map(|l| (-4.0 * l).exp());
    let mut g = DMatrix::zeros(n, spec.components);
    for c in 0..spec.components {
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let smooth = crate::graph::apply_kernel_filter(s, &low, &z)?;
        let (lo, hi) = (smooth.min(), smooth.max());
        let span = if hi > lo { hi - lo } else { 1.0 };
        g.set_column(c, &smooth.map(|v| 0.1 + 0.9 * (v - lo) / span));
    }
    let b = DMatrix::from_fn(spec.order, spec.components, |_, _| StandardNormal.sample(&mut rng));
    let model = LsgpModel::from_polynomial(graph.clone(), g, b)?;
    Ok((graph, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizedSpec {
    pub nodes: usize,
    pub knn: usize,
    pub components: usize,
    /// Foreign memberships are uniform in `[−leakage, leakage]`.
    pub leakage: f64,
    /// Zero every kernel above a random cutoff below `nodes`.
    pub band_limited: bool,
    pub seed: u64,
}

impl Default for LocalizedSpec {
    fn default() -> Self {
        LocalizedSpec { nodes: 24, knn: 4, components: 3, leakage: 0.2, band_limited: false, seed: 0 }
    }
}

/// Random model localized on a random partition.
///
/// Parts are geodesic Voronoi cells around distinct random seed vertices
/// (ties to the lowest seed). Own memberships are uniform in `[0.5, 1.5]`;
/// kernels are nonnegative uniform.
pub fn random_localized_model(spec: &LocalizedSpec) -> Result<(LsgpModel, Partition)> {
    let (n, k) = (spec.nodes, spec.components);
    if k == 0 || k > n {
        return Err(Error::Partition { n, parts: k });
    }
    if !(spec.leakage >= 0.0) {
        return Err(Error::InvalidArgument(format!("leakage must be nonnegative, got {}", spec.leakage)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let graph = Arc::new(connected_knn_graph(n, spec.knn, &mut rng)?);
    let dist = crate::graph::geodesic_distances(&graph);
    let seeds = rand::seq::index::sample(&mut rng, n, k).into_vec();
    let labels: Vec<usize> = (0..n)
        .map(|v| (0..k).min_by_key(|&c| (dist[(v, seeds[c])], c)).unwrap_or(0))
        .collect();
    let partition = Partition::new(labels, k)?;
    let g = DMatrix::from_fn(n, k, |i, c| {
        if partition.labels()[i] == c {
            rng.random_range(0.5..1.5)
        } else if spec.leakage > 0.0 {
            rng.random_range(-spec.leakage..=spec.leakage)
        } else {
            0.0
        }
    });
    let cutoff = if spec.band_limited { rng.random_range(1..n) } else { n };
    let h = DMatrix::from_fn(n, k, |i, _| if i < cutoff { rng.random_range(0.01..1.0) } else { 0.0 });
    let model = LsgpModel::new(graph, g, h)?;
    Ok((model, partition))
}
