//! Per-token detection head and IoU-based evaluation.
//!
//! The head scores every token with a logistic linear probe, groups tokens
//! above threshold into connected components on the region grid, and emits
//! one box per component. The probe is fitted in closed form (ridge least
//! squares) to token labels derived from ground-truth boxes, so no training
//! loop is involved.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, GridSpec};
use crate::tensor::Matrix;

/// Probe targets in logit space for object / background tokens.
const LOGIT_TARGET: f64 = 4.0;

/// Fraction of a region a box must cover for the token to count as object.
pub const TOKEN_COVERAGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
    #[serde(rename = "class")]
    pub class_id: u32,
}

/// One frame of detector output; also the dynamic-mask input format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub index: usize,
    pub detections: Vec<Detection>,
}

impl FrameDetections {
    pub fn boxes(&self) -> Vec<BBox> {
        self.detections.iter().map(|d| d.bbox).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionHead {
    grid: GridSpec,
    objectness_weight: Vec<f64>,
    objectness_bias: f64,
    /// One row per class.
    class_weight: Vec<Vec<f64>>,
    class_bias: Vec<f64>,
    pub threshold: f64,
    pub connectivity: Connectivity,
}

/// Ridge solution of `[X 1]·w ≈ y`; the bias column is not penalised.
fn ridge_fit(x: &[&[f32]], y: &[f64], ridge: f64) -> Result<(Vec<f64>, f64)> {
    let dim = x.first().map_or(0, |r| r.len());
    let mut a = DMatrix::<f64>::zeros(dim + 1, dim + 1);
    let mut b = DVector::<f64>::zeros(dim + 1);
    let mut row = vec![0.0; dim + 1];
    for (xi, &yi) in x.iter().zip(y) {
        for (r, &v) in row.iter_mut().zip(xi.iter()) {
            *r = v as f64;
        }
        row[dim] = 1.0;
        for i in 0..=dim {
            b[i] += row[i] * yi;
            for j in 0..=dim {
                a[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..dim {
        a[(i, i)] += ridge;
    }
    // Keeps the system positive definite when every sample is identical.
    a[(dim, dim)] += 1e-9;
    let w = a
        .cholesky()
        .ok_or_else(|| Error::InvalidConfig("probe system is not positive definite".into()))?
        .solve(&b);
    Ok((w.iter().take(dim).copied().collect(), w[dim]))
}

/// Object label per token: the class of the box covering the largest share
/// of the region, if that share is at least [`TOKEN_COVERAGE`].
pub fn token_labels(grid: &GridSpec, boxes: &[BBox], classes: &[u32]) -> Vec<Option<u32>> {
    let area = (grid.region_size * grid.region_size) as f64;
    (0..grid.num_tokens())
        .map(|i| {
            let (r, c) = grid.row_col(i);
            let cell = grid.region_box(r, c);
            let mut best: Option<(usize, u32)> = None;
            for (j, b) in boxes.iter().enumerate() {
                let ov = cell.intersection_area(b);
                if ov > 0 && best.is_none_or(|(o, _)| ov > o) {
                    best = Some((ov, classes.get(j).copied().unwrap_or(0)));
                }
            }
            best.filter(|&(ov, _)| ov as f64 / area >= TOKEN_COVERAGE)
                .map(|(_, class)| class)
        })
        .collect()
}

/// Training sample for the probe: features with the frame's ground truth.
#[derive(Debug, Clone, Copy)]
pub struct ProbeSample<'a> {
    pub features: &'a Matrix,
    pub boxes: &'a [BBox],
    pub classes: &'a [u32],
}

impl DetectionHead {
    /// Fits objectness and class probes by ridge regression.
    pub fn fit(
        grid: GridSpec,
        samples: &[ProbeSample<'_>],
        num_classes: usize,
        ridge: f64,
    ) -> Result<Self> {
        let mut rows: Vec<&[f32]> = Vec::new();
        let mut obj_targets = Vec::new();
        let mut labels = Vec::new();
        for s in samples {
            if s.features.rows() != grid.num_tokens() {
                return Err(Error::DimensionMismatch(format!(
                    "{} feature rows for {} tokens",
                    s.features.rows(),
                    grid.num_tokens()
                )));
            }
            for (i, label) in token_labels(&grid, s.boxes, s.classes)
                .into_iter()
                .enumerate()
            {
                rows.push(s.features.row(i));
                obj_targets.push(if label.is_some() {
                    LOGIT_TARGET
                } else {
                    -LOGIT_TARGET
                });
                labels.push(label);
            }
        }
        if rows.is_empty() {
            return Err(Error::EmptySequence);
        }
        let dim = rows[0].len();
        let (objectness_weight, objectness_bias) = ridge_fit(&rows, &obj_targets, ridge)?;

        let num_classes = num_classes.max(1);
        let obj_rows: Vec<&[f32]> = rows
            .iter()
            .zip(&labels)
            .filter_map(|(r, l)| l.map(|_| *r))
            .collect();
        let mut class_weight = vec![vec![0.0; dim]; num_classes];
        let mut class_bias = vec![0.0; num_classes];
        if num_classes > 1 && !obj_rows.is_empty() {
            for (k, (cw, cb)) in class_weight.iter_mut().zip(&mut class_bias).enumerate() {
                let y: Vec<f64> = labels
                    .iter()
                    .flatten()
                    .map(|&c| if c as usize == k { 1.0 } else { 0.0 })
                    .collect();
                let (w, b) = ridge_fit(&obj_rows, &y, ridge)?;
                *cw = w;
                *cb = b;
            }
        }
        Ok(Self {
            grid,
            objectness_weight,
            objectness_bias,
            class_weight,
            class_bias,
            threshold: 0.5,
            connectivity: Connectivity::Four,
        })
    }

    /// Head with explicit probe weights.
    pub fn from_weights(
        grid: GridSpec,
        objectness_weight: Vec<f64>,
        objectness_bias: f64,
        class_weight: Vec<Vec<f64>>,
        class_bias: Vec<f64>,
    ) -> Result<Self> {
        if class_weight.len() != class_bias.len()
            || class_weight
                .iter()
                .any(|w| w.len() != objectness_weight.len())
        {
            return Err(Error::DimensionMismatch("class probe shape".into()));
        }
        Ok(Self {
            grid,
            objectness_weight,
            objectness_bias,
            class_weight,
            class_bias,
            threshold: 0.5,
            connectivity: Connectivity::Four,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Logistic objectness per token.
    pub fn objectness(&self, features: &Matrix) -> Vec<f64> {
        (0..features.rows())
            .map(|i| {
                let z = dot_f64(features.row(i), &self.objectness_weight) + self.objectness_bias;
                1.0 / (1.0 + (-z).exp())
            })
            .collect()
    }

    fn token_class(&self, row: &[f32]) -> u32 {
        let mut best = (0u32, f64::NEG_INFINITY);
        for (k, (w, b)) in self.class_weight.iter().zip(&self.class_bias).enumerate() {
            let s = dot_f64(row, w) + b;
            if s > best.1 {
                best = (k as u32, s);
            }
        }
        best.0
    }

    pub fn detect(&self, features: &Matrix) -> Result<Vec<Detection>> {
        self.detect_with_threshold(features, self.threshold)
    }

    /// One detection per connected component of tokens whose objectness
    /// exceeds `threshold`. Components are ordered by their smallest token index.
    pub fn detect_with_threshold(
        &self,
        features: &Matrix,
        threshold: f64,
    ) -> Result<Vec<Detection>> {
        if features.rows() != self.grid.num_tokens()
            || features.cols() != self.objectness_weight.len()
        {
            return Err(Error::DimensionMismatch(format!(
                "features {:?} for a {}-token, {}-wide head",
                features.shape(),
                self.grid.num_tokens(),
                self.objectness_weight.len()
            )));
        }
        let scores = self.objectness(features);
        let active: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
        let comps = connected_components(
            &active,
            self.grid.rows(),
            self.grid.cols(),
            self.connectivity,
        );
        let s = self.grid.region_size;
        Ok(comps
            .into_iter()
            .map(|tokens| {
                let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
                let mut score = 0.0f64;
                let mut votes = vec![0usize; self.class_weight.len().max(1)];
                for &t in &tokens {
                    let (r, c) = self.grid.row_col(t);
                    r0 = r0.min(r);
                    c0 = c0.min(c);
                    r1 = r1.max(r);
                    c1 = c1.max(c);
                    score = score.max(scores[t]);
                    votes[self.token_class(features.row(t)) as usize] += 1;
                }
                // Most votes; ties go to the smaller class id.
                let class_id = votes
                    .iter()
                    .enumerate()
                    .fold(
                        (0, 0),
                        |best, (k, &v)| if v > best.1 { (k, v) } else { best },
                    )
                    .0 as u32;
                Detection {
                    bbox: BBox {
                        x1: c0 * s,
                        y1: r0 * s,
                        x2: (c1 + 1) * s,
                        y2: (r1 + 1) * s,
                    },
                    score,
                    class_id,
                }
            })
            .collect())
    }
}

fn dot_f64(row: &[f32], w: &[f64]) -> f64 {
    row.iter().zip(w).map(|(&x, &w)| x as f64 * w).sum()
}

/// Labels connected `true` cells with a two-pass union-find scan. Each
/// component lists its cells in increasing row-major order; components are
/// ordered by their first cell.
pub fn connected_components(
    active: &[bool],
    rows: usize,
    cols: usize,
    connectivity: Connectivity,
) -> Vec<Vec<usize>> {
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut parent: Vec<usize> = (0..active.len()).collect();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if !active[i] {
                continue;
            }
            let mut neighbours = Vec::with_capacity(4);
            if c > 0 {
                neighbours.push(i - 1);
            }
            if r > 0 {
                neighbours.push(i - cols);
                if connectivity == Connectivity::Eight {
                    if c > 0 {
                        neighbours.push(i - cols - 1);
                    }
                    if c + 1 < cols {
                        neighbours.push(i - cols + 1);
                    }
                }
            }
            for n in neighbours {
                if active[n] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, n));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut by_root: Vec<Option<usize>> = vec![None; active.len()];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for (i, _) in active.iter().enumerate().filter(|(_, &a)| a) {
        let root = find(&mut parent, i);
        match by_root[root] {
            Some(k) => comps[k].push(i),
            None => {
                by_root[root] = Some(comps.len());
                comps.push(vec![i]);
            }
        }
    }
    comps
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    inter as f64 / (a.area() + b.area() - inter) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matches: usize,
    pub num_detections: usize,
    pub num_ground_truth: usize,
    pub iou_threshold: f64,
}

impl EvalResult {
    pub fn from_counts(
        matches: usize,
        num_detections: usize,
        num_ground_truth: usize,
        iou_threshold: f64,
    ) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matches, num_detections);
        let recall = ratio(matches, num_ground_truth);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            matches,
            num_detections,
            num_ground_truth,
            iou_threshold,
        }
    }

    /// Pools counts from several evaluations at the same threshold.
    pub fn pooled<'a, I: IntoIterator<Item = &'a EvalResult>>(
        results: I,
        iou_threshold: f64,
    ) -> Self {
        let (mut m, mut d, mut g) = (0, 0, 0);
        for r in results {
            m += r.matches;
            d += r.num_detections;
            g += r.num_ground_truth;
        }
        Self::from_counts(m, d, g, iou_threshold)
    }
}

/// Greedy matching per frame: detections in descending score order (ties by
/// input order) each take the unmatched ground truth with the highest IoU,
/// if that IoU reaches the threshold. Empty denominators report 0.
pub fn evaluate(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<BBox>],
    iou_threshold: f64,
) -> Result<EvalResult> {
    if detections.len() != ground_truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} detection frames vs {} ground-truth frames",
            detections.len(),
            ground_truth.len()
        )));
    }
    let (mut matches, mut n_det, mut n_gt) = (0, 0, 0);
    for (dets, gts) in detections.iter().zip(ground_truth) {
        n_det += dets.len();
        n_gt += gts.len();
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
        let mut taken = vec![false; gts.len()];
        for i in order {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let v = iou(&dets[i].bbox, g);
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                taken[j] = true;
                matches += 1;
            }
        }
    }
    Ok(EvalResult::from_counts(matches, n_det, n_gt, iou_threshold))
}
