//! AUROC, suite evaluation over ID/OOD sample sets, and the norm-order scan.
//!
//! ID is the positive class. Every score is oriented by its polarity before
//! ranking, so reported AUROCs read "higher is better ID detection".

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::closed_form::{gradnorm_closed, exgrad_closed, uv_score_unchecked, Polarity, UTermKind, UvScoreSpec, VTermKind};
use crate::data::{FeatureDump, RawDataset, Report, FORMAT_VERSION};
use crate::descriptor::{ClosedFormKind, ScoreDescriptor, ScoreFamily};
use crate::error::{Error, Result};
use crate::grad::{deep_grad_score, shallow_grad_score, AnchorGradient, AnchorSet, Depth, MicroMlp};
use crate::math::{softmax, vector_norm, Encoding, LastLayerShape, Logits, NormOrder, Temperature};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredSample {
    pub sample_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AurocResult {
    pub value: f64,
    pub id_count: usize,
    pub ood_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detection {
    Id,
    Ood,
}

/// `I[S(x) > epsilon]` after orientation; ties go to OOD.
pub fn threshold_classify(score: f64, epsilon: f64, polarity: Polarity) -> Detection {
    if polarity.orient(score) > polarity.orient(epsilon) {
        Detection::Id
    } else {
        Detection::Ood
    }
}

/// Rank-based AUROC with half credit for ties. Non-finite scores are
/// reported as `id[i]` / `ood[i]`.
pub fn auroc(id: &[f64], ood: &[f64], polarity: Polarity) -> Result<AurocResult> {
    check_scores("id", id.iter().copied().enumerate().map(|(i, s)| (None, i, s)))?;
    check_scores("ood", ood.iter().copied().enumerate().map(|(i, s)| (None, i, s)))?;
    nonempty(id.len(), ood.len())?;
    Ok(ranked_auroc(id, ood, polarity))
}

/// As [`auroc`], naming the `sample_id` of any non-finite score.
pub fn auroc_samples(id: &[ScoredSample], ood: &[ScoredSample], polarity: Polarity) -> Result<AurocResult> {
    let tagged = |s: &[ScoredSample]| {
        s.iter()
            .enumerate()
            .map(|(i, x)| (Some(x.sample_id.clone()), i, x.score))
            .collect::<Vec<_>>()
    };
    check_scores("id", tagged(id).into_iter())?;
    check_scores("ood", tagged(ood).into_iter())?;
    nonempty(id.len(), ood.len())?;
    let raw = |s: &[ScoredSample]| s.iter().map(|x| x.score).collect::<Vec<_>>();
    Ok(ranked_auroc(&raw(id), &raw(ood), polarity))
}

fn nonempty(n_id: usize, n_ood: usize) -> Result<()> {
    if n_id == 0 || n_ood == 0 {
        return Err(Error::InvalidInput(format!(
            "AUROC needs at least one ID and one OOD score, got {n_id} and {n_ood}"
        )));
    }
    Ok(())
}

fn check_scores(side: &str, scores: impl Iterator<Item = (Option<String>, usize, f64)>) -> Result<()> {
    for (id, i, s) in scores {
        if !s.is_finite() {
            return Err(Error::NonFiniteScore {
                sample_id: id.unwrap_or_else(|| format!("{side}[{i}]")),
                value: s,
            });
        }
    }
    Ok(())
}

/// Counts `2 * U` exactly in integers over tie groups, so the result is
/// the same float as the pairwise definition.
fn ranked_auroc(id: &[f64], ood: &[f64], polarity: Polarity) -> AurocResult {
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (polarity.orient(s), true))
        .chain(ood.iter().map(|&s| (polarity.orient(s), false)))
        .collect();
    // partial_cmp keeps -0.0 and 0.0 in one tie group
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

    let mut twice_u: u128 = 0;
    let mut ood_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut id_g, mut ood_g) = (0u128, 0u128);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                id_g += 1;
            } else {
                ood_g += 1;
            }
            j += 1;
        }
        twice_u += 2 * id_g * ood_below + id_g * ood_g;
        ood_below += ood_g;
        i = j;
    }
    let pairs = id.len() as u128 * ood.len() as u128;
    AurocResult {
        value: twice_u as f64 / (2 * pairs) as f64,
        id_count: id.len(),
        ood_count: ood.len(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub h: Encoding,
    pub logits: Logits,
    /// Network input, needed only by deep scores.
    pub raw: Option<Vec<f64>>,
}

/// Samples sharing one last-layer shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    shape: LastLayerShape,
    samples: Vec<Sample>,
}

impl SampleSet {
    pub fn new(shape: LastLayerShape, samples: Vec<Sample>) -> Result<Self> {
        for s in &samples {
            shape.check(&s.h, &s.logits)?;
        }
        Ok(Self { shape, samples })
    }

    pub fn from_dump(dump: &FeatureDump) -> Result<Self> {
        let m = &dump.manifest;
        let shape = LastLayerShape::new(m.class_count, m.encoding_dim)?;
        let samples = dump
            .rows
            .iter()
            .map(|r| {
                let h = if m.bias_augmented {
                    Encoding::from_augmented(r.h.clone())?
                } else {
                    Encoding::new(r.h.clone())?
                };
                Ok(Sample {
                    sample_id: r.sample_id.clone(),
                    h,
                    logits: Logits::new(r.logits.clone())?,
                    raw: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, samples)
    }

    /// Attaches raw inputs; ids must match row for row.
    pub fn with_raw(mut self, raw: &RawDataset) -> Result<Self> {
        if raw.len() != self.samples.len() {
            return Err(Error::DimensionMismatch {
                what: "raw sample count",
                expected: self.samples.len(),
                found: raw.len(),
            });
        }
        for (s, r) in self.samples.iter_mut().zip(&raw.samples) {
            if s.sample_id != r.sample_id {
                return Err(Error::InvalidInput(format!(
                    "raw sample `{}` does not match feature row `{}`",
                    r.sample_id, s.sample_id
                )));
            }
            s.raw = Some(r.x.clone());
        }
        Ok(self)
    }

    pub fn shape(&self) -> LastLayerShape {
        self.shape
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub struct SuiteInputs<'a> {
    pub id: &'a SampleSet,
    pub ood: &'a SampleSet,
    pub model: Option<&'a MicroMlp>,
    /// One anchor input per class, for BatchGrad.
    pub anchors: Option<&'a AnchorSet>,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOptions {
    /// Worker threads for per-sample scoring; `None` uses rayon's default.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEntry {
    pub name: String,
    pub descriptor: ScoreFamily,
    pub polarity: Polarity,
    pub auroc: f64,
    pub id_count: usize,
    pub ood_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub format_version: String,
    pub entries: Vec<ReportEntry>,
    /// Resolved run configuration, filled in by the caller.
    pub run: Map<String, Value>,
}

impl Report for EvalReport {
    fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidInput("evaluation report has no entries".into()));
        }
        Ok(())
    }
}

enum Scorer<'a> {
    Uv(UvScoreSpec),
    Closed(ClosedFormKind, Temperature),
    Shallow(crate::grad::GradScoreSpec),
    Deep(crate::grad::GradScoreSpec, &'a MicroMlp),
    BatchShallow(AnchorGradient),
    BatchDeep(AnchorGradient, &'a MicroMlp),
}

impl Scorer<'_> {
    fn score(&self, s: &Sample) -> Result<f64> {
        match self {
            Scorer::Uv(spec) => Ok(uv_score_unchecked(&s.h, &s.logits, spec)),
            Scorer::Closed(kind, t) => {
                let p = softmax(&s.logits, *t);
                Ok(match kind {
                    ClosedFormKind::GradNorm => gradnorm_closed(&s.h, &p, *t),
                    ClosedFormKind::ExGrad => exgrad_closed(&s.h, &p, *t),
                })
            }
            Scorer::Shallow(spec) => shallow_grad_score(&s.h, &s.logits, spec),
            Scorer::Deep(spec, m) => deep_grad_score(m, raw_of(s)?, spec),
            Scorer::BatchShallow(a) => a.score_features(&s.h.augmented(), &s.logits),
            Scorer::BatchDeep(a, m) => a.score(m, raw_of(s)?),
        }
    }
}

fn raw_of(s: &Sample) -> Result<&[f64]> {
    s.raw.as_deref().ok_or_else(|| {
        Error::InvalidInput(format!("sample `{}` has no raw input for a deep score", s.sample_id))
    })
}

fn scorer<'a>(d: &ScoreDescriptor, inputs: &SuiteInputs<'a>) -> Result<Scorer<'a>> {
    let missing = |requirement| Error::MissingRequirement {
        descriptor: d.name.clone(),
        requirement,
    };
    let model = if d.needs_model() {
        Some(inputs.model.ok_or_else(|| missing("a model (--model)"))?)
    } else {
        None
    };
    if d.needs_raw_inputs() && [inputs.id, inputs.ood].iter().any(|s| s.samples.iter().any(|x| x.raw.is_none())) {
        return Err(missing("raw inputs for both sample sets (--id-raw, --ood-raw)"));
    }
    if let Some(m) = model {
        if inputs.id.shape.class_count != m.class_count() {
            return Err(Error::DimensionMismatch {
                what: "model class count",
                expected: inputs.id.shape.class_count,
                found: m.class_count(),
            });
        }
    }
    Ok(match &d.family {
        ScoreFamily::Uv { spec } => Scorer::Uv(*spec),
        ScoreFamily::ClosedForm { kind, temperature } => Scorer::Closed(*kind, *temperature),
        ScoreFamily::Gradient { spec } => match (spec.depth, model) {
            (Depth::Deep, Some(m)) => Scorer::Deep(*spec, m),
            _ => Scorer::Shallow(*spec),
        },
        ScoreFamily::BatchGrad { depth, temperature } => {
            let m = model.expect("BatchGrad needs a model");
            let anchors = inputs.anchors.ok_or_else(|| missing("anchor inputs (--anchors)"))?;
            let a = AnchorGradient::compute(m, anchors, *depth, *temperature)?;
            match depth {
                Depth::Shallow => Scorer::BatchShallow(a),
                Depth::Deep => Scorer::BatchDeep(a, m),
            }
        }
    })
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn check_shapes(id: &SampleSet, ood: &SampleSet) -> Result<()> {
    if id.shape != ood.shape {
        return Err(Error::InvalidInput(format!(
            "ID features have {} classes and encoding dimension {}, OOD features have {} and {}",
            id.shape.class_count, id.shape.encoding_dim, ood.shape.class_count, ood.shape.encoding_dim
        )));
    }
    Ok(())
}

fn score_set(scorer: &Scorer<'_>, set: &SampleSet) -> Result<Vec<ScoredSample>> {
    set.samples
        .par_iter()
        .map(|s| {
            Ok(ScoredSample {
                sample_id: s.sample_id.clone(),
                score: scorer.score(s)?,
            })
        })
        .collect()
}

/// Scores every sample under every descriptor and reports one AUROC per
/// descriptor, in the order given. Duplicates are kept.
pub fn evaluate_suite(descriptors: &[ScoreDescriptor], inputs: &SuiteInputs<'_>, options: &SuiteOptions) -> Result<EvalReport> {
    if descriptors.is_empty() {
        return Err(Error::InvalidInput("no scores requested".into()));
    }
    check_shapes(inputs.id, inputs.ood)?;
    let scorers = descriptors.iter().map(|d| scorer(d, inputs)).collect::<Result<Vec<_>>>()?;
    let entries = with_pool(options.threads, || {
        descriptors
            .iter()
            .zip(&scorers)
            .map(|(d, sc)| {
                let id = score_set(sc, inputs.id)?;
                let ood = score_set(sc, inputs.ood)?;
                let r = auroc_samples(&id, &ood, d.polarity())?;
                Ok(ReportEntry {
                    name: d.name.clone(),
                    descriptor: d.family.clone(),
                    polarity: d.polarity(),
                    auroc: r.value,
                    id_count: r.id_count,
                    ood_count: r.ood_count,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(EvalReport {
        format_version: FORMAT_VERSION.to_string(),
        entries,
        run: Map::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanCell {
    pub v_term: VTermKind,
    pub norm_order: NormOrder,
    pub auroc: f64,
}

/// AUROC for every `(V term, norm order)` pair; `cells` is row-major over
/// `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanGrid {
    pub format_version: String,
    pub rows: Vec<VTermKind>,
    pub cols: Vec<NormOrder>,
    pub cells: Vec<ScanCell>,
    pub run: Map<String, Value>,
}

impl ScanGrid {
    pub fn cell(&self, v: VTermKind, order: NormOrder) -> Option<&ScanCell> {
        self.cells.iter().find(|c| c.v_term == v && c.norm_order == order)
    }
}

impl Report for ScanGrid {
    fn validate(&self) -> Result<()> {
        if self.cells.is_empty() || self.cells.len() != self.rows.len() * self.cols.len() {
            return Err(Error::InvalidInput(format!(
                "scan grid has {} cells for {} x {} terms",
                self.cells.len(),
                self.rows.len(),
                self.cols.len()
            )));
        }
        Ok(())
    }
}

/// Per-sample V and U values, computed once and multiplied per cell.
fn scan_terms(set: &SampleSet, orders: &[NormOrder], v_terms: &[VTermKind], t: Temperature) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    set.samples
        .par_iter()
        .map(|s| {
            let v = v_terms.iter().map(|v| v.evaluate(&s.logits, t)).collect();
            let u = orders.iter().map(|&o| vector_norm(s.h.as_slice(), o)).collect();
            (v, u)
        })
        .unzip()
}

pub fn norm_scan(
    id: &SampleSet,
    ood: &SampleSet,
    orders: &[NormOrder],
    v_terms: &[VTermKind],
    t: Temperature,
    options: &SuiteOptions,
) -> Result<ScanGrid> {
    if orders.is_empty() || v_terms.is_empty() {
        return Err(Error::InvalidInput("norm scan needs at least one order and one V term".into()));
    }
    check_shapes(id, ood)?;
    let ((id_v, id_u), (ood_v, ood_u)) = with_pool(options.threads, || {
        (scan_terms(id, orders, v_terms, t), scan_terms(ood, orders, v_terms, t))
    })?;

    let mut cells = Vec::with_capacity(orders.len() * v_terms.len());
    for (r, &v) in v_terms.iter().enumerate() {
        let polarity = UvScoreSpec::new(UTermKind::Unit, v, t).polarity;
        for (c, &order) in orders.iter().enumerate() {
            let side = |set: &SampleSet, vs: &[Vec<f64>], us: &[Vec<f64>]| -> Vec<ScoredSample> {
                set.samples
                    .iter()
                    .zip(vs.iter().zip(us))
                    .map(|(s, (v, u))| ScoredSample {
                        sample_id: s.sample_id.clone(),
                        score: u[c] * v[r],
                    })
                    .collect()
            };
            let result = auroc_samples(&side(id, &id_v, &id_u), &side(ood, &ood_v, &ood_u), polarity)?;
            cells.push(ScanCell {
                v_term: v,
                norm_order: order,
                auroc: result.value,
            });
        }
    }
    Ok(ScanGrid {
        format_version: FORMAT_VERSION.to_string(),
        rows: v_terms.to_vec(),
        cols: orders.to_vec(),
        cells,
        run: Map::new(),
    })
}
