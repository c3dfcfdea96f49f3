//! SLIC superpixels with connectivity enforcement, and superpixel-mean
//! refinement of score maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ImageRgb, ScoreMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlicParams {
    pub clusters: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self { clusters: 96, compactness: 10.0, iterations: 10 }
    }
}

/// Cluster id per pixel (row-major).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelSegmentation {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    num_clusters: usize,
}

impl SuperpixelSegmentation {
    /// Validates the partition invariants: ids dense in `[0, n)`, every id
    /// used, every cluster 4-connected.
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width || labels.is_empty() {
            return Err(Error::shape(format!("{} labels for {height}x{width}", labels.len())));
        }
        let num_clusters = labels.iter().max().map_or(0, |&m| m as usize + 1);
        let seg = Self { height, width, labels, num_clusters };
        let comps = components(height, width, &seg.labels);
        let mut seen = vec![false; num_clusters];
        for c in &comps.first_label {
            let c = *c as usize;
            if seen[c] {
                return Err(Error::Contract(format!("cluster {c} is not 4-connected")));
            }
            seen[c] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::Contract(format!("cluster {c} is empty")));
        }
        Ok(seg)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.num_clusters];
        for &l in &self.labels {
            s[l as usize] += 1;
        }
        s
    }
}

struct Components {
    /// component id per pixel
    id: Vec<usize>,
    /// label of each component
    first_label: Vec<u32>,
    size: Vec<usize>,
}

fn components(h: usize, w: usize, labels: &[u32]) -> Components {
    let mut id = vec![usize::MAX; h * w];
    let mut first_label = Vec::new();
    let mut size = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if id[start] != usize::MAX {
            continue;
        }
        let c = first_label.len();
        let l = labels[start];
        first_label.push(l);
        let mut n = 0;
        id[start] = c;
        stack.push(start);
        while let Some(p) = stack.pop() {
            n += 1;
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if id[q] == usize::MAX && labels[q] == l {
                    id[q] = c;
                    stack.push(q);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
        size.push(n);
    }
    Components { id, first_label, size }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Keeps the largest component of each label and merges every other
/// component into its largest adjacent region, then renumbers ids densely in
/// scan order.
fn enforce_connectivity(h: usize, w: usize, labels: &[u32]) -> Vec<u32> {
    let comps = components(h, w, labels);
    let nc = comps.size.len();
    let mut best: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    for c in 0..nc {
        let e = best.entry(comps.first_label[c]).or_insert(c);
        if comps.size[c] > comps.size[*e] {
            *e = c;
        }
    }
    let mut kept = vec![false; nc];
    for &c in best.values() {
        kept[c] = true;
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for (p, &c) in comps.id.iter().enumerate() {
        members[c].push(p);
    }
    let mut parent: Vec<usize> = (0..nc).collect();
    let mut group_size = comps.size.clone();
    for o in (0..nc).filter(|&c| !kept[c]) {
        let root = find(&mut parent, o);
        let mut target: Option<(usize, usize)> = None;
        for &p in &members[root] {
            let (y, x) = (p / w, p % w);
            let mut nbrs = [usize::MAX; 4];
            if y > 0 {
                nbrs[0] = p - w;
            }
            if y + 1 < h {
                nbrs[1] = p + w;
            }
            if x > 0 {
                nbrs[2] = p - 1;
            }
            if x + 1 < w {
                nbrs[3] = p + 1;
            }
            for q in nbrs.into_iter().filter(|&q| q != usize::MAX) {
                let r = find(&mut parent, comps.id[q]);
                if r == root {
                    continue;
                }
                let cand = (group_size[r], r);
                target = match target {
                    Some(t) if t.0 > cand.0 || (t.0 == cand.0 && t.1 <= cand.1) => Some(t),
                    _ => Some(cand),
                };
            }
        }
        if let Some((_, r)) = target {
            parent[root] = r;
            group_size[r] += group_size[root];
            let moved = std::mem::take(&mut members[root]);
            members[r].extend(moved);
        }
    }
    let mut group_label = vec![u32::MAX; nc];
    for c in (0..nc).filter(|&c| kept[c]) {
        let r = find(&mut parent, c);
        group_label[r] = comps.first_label[c];
    }
    let mut remap = std::collections::HashMap::new();
    comps
        .id
        .iter()
        .map(|&c| {
            let r = find(&mut parent, c);
            let l = group_label[r];
            let next = remap.len() as u32;
            *remap.entry(l).or_insert(next)
        })
        .collect()
}

/// SLIC clustering in `(r, g, b, m*x/S, m*y/S)` with RGB scaled to `[0, 255]`.
pub fn slic(image: &ImageRgb, params: &SlicParams) -> Result<SuperpixelSegmentation> {
    let (h, w) = image.dims();
    let k = params.clusters;
    if k == 0 || k > h * w {
        return Err(Error::config(format!("slic needs 1 <= K <= {} pixels, got {k}", h * w)));
    }
    if !(params.compactness > 0.0 && params.compactness.is_finite()) {
        return Err(Error::config("slic compactness must be positive"));
    }
    let s = ((h * w) as f64 / k as f64).sqrt();
    let ny = ((h as f64 / s).round() as usize).clamp(1, h);
    let nx = ((w as f64 / s).round() as usize).clamp(1, w);
    let px: Vec<[f64; 3]> = image.pixels().iter().map(|c| [c[0] * 255.0, c[1] * 255.0, c[2] * 255.0]).collect();

    // center: [r, g, b, y, x]
    let mut centers: Vec<[f64; 5]> = Vec::with_capacity(ny * nx);
    for gy in 0..ny {
        for gx in 0..nx {
            let y = (((gy as f64 + 0.5) * h as f64 / ny as f64) as usize).min(h - 1);
            let x = (((gx as f64 + 0.5) * w as f64 / nx as f64) as usize).min(w - 1);
            let c = px[y * w + x];
            centers.push([c[0], c[1], c[2], y as f64, x as f64]);
        }
    }
    // initial assignment: grid cell of each pixel
    let mut labels: Vec<u32> = (0..h * w)
        .map(|p| {
            let gy = ((p / w) * ny / h).min(ny - 1);
            let gx = ((p % w) * nx / w).min(nx - 1);
            (gy * nx + gx) as u32
        })
        .collect();
    let spatial = (params.compactness / s).powi(2);
    let mut dist = vec![f64::INFINITY; h * w];
    for _ in 0..params.iterations {
        dist.fill(f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let y0 = (c[3] - s).floor().max(0.0) as usize;
            let y1 = ((c[3] + s).ceil() as usize).min(h - 1);
            let x0 = (c[4] - s).floor().max(0.0) as usize;
            let x1 = ((c[4] + s).ceil() as usize).min(w - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y * w + x;
                    let q = px[p];
                    let dc = (q[0] - c[0]).powi(2) + (q[1] - c[1]).powi(2) + (q[2] - c[2]).powi(2);
                    let ds = (y as f64 - c[3]).powi(2) + (x as f64 - c[4]).powi(2);
                    let d = dc + spatial * ds;
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = ci as u32;
                    }
                }
            }
        }
        let mut acc = vec![[0.0f64; 6]; centers.len()];
        for (p, &l) in labels.iter().enumerate() {
            let a = &mut acc[l as usize];
            let q = px[p];
            a[0] += q[0];
            a[1] += q[1];
            a[2] += q[2];
            a[3] += (p / w) as f64;
            a[4] += (p % w) as f64;
            a[5] += 1.0;
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a[5] > 0.0 {
                for d in 0..5 {
                    c[d] = a[d] / a[5];
                }
            }
        }
    }
    let labels = enforce_connectivity(h, w, &labels);
    SuperpixelSegmentation::new(h, w, labels)
}

/// Replaces each pixel by the mean map value of its superpixel.
pub fn superpixel_refine(map: &ScoreMap, seg: &SuperpixelSegmentation) -> Result<ScoreMap> {
    map.ensure_same_dims(seg.dims(), "superpixel_refine")?;
    let n = seg.num_clusters();
    // accumulate offsets from the first member so constant clusters are exact
    let mut anchor = vec![f64::NAN; n];
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (&l, &v) in seg.labels().iter().zip(map.values()) {
        let l = l as usize;
        if count[l] == 0 {
            anchor[l] = v;
        }
        sum[l] += v - anchor[l];
        count[l] += 1;
    }
    let mean: Vec<f64> = (0..n).map(|l| anchor[l] + sum[l] / count[l] as f64).collect();
    ScoreMap::clamped(map.height(), map.width(), seg.labels().iter().map(|&l| mean[l as usize]).collect())
}
