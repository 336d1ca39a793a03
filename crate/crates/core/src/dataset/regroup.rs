use std::collections::{HashMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{build_vocab, DatasetManifest, GroupEntry, GroupSample, ImageEntry, Split};
use crate::error::{GresError, Result};

/// A single-image referring annotation: one image, one expression, one mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResAnnotation {
    pub image_id: String,
    pub expression: Vec<String>,
    pub mask_path: String,
}

/// Number of positives placed in one group of size `n`.
fn positives_per_group(n: usize) -> usize {
    (n / 2).max(1)
}

/// Converts per-image annotations into "one expression vs. a group of images".
///
/// Annotations sharing an exact token sequence form one group. Positives are
/// chunked `N/2` at a time; each chunk is matched by the same number of
/// negatives sampled from `negatives_pool` (images never annotated with that
/// expression), then padded with further negatives up to `n`. With `n = 1`
/// the matching negatives become their own single-image groups.
pub fn regroup_res(
    annotations: &[ResAnnotation],
    negatives_pool: &[String],
    n: usize,
    split: Split,
    seed: u64,
) -> Result<DatasetManifest> {
    if annotations.is_empty() {
        return Err(GresError::Dataset("no annotations to regroup".into()));
    }
    if n == 0 {
        return Err(GresError::Dataset("group size must be at least 1".into()));
    }

    let mut order: Vec<&[String]> = Vec::new();
    let mut by_expr: HashMap<&[String], Vec<&ResAnnotation>> = HashMap::new();
    for ann in annotations {
        if ann.expression.is_empty() {
            return Err(GresError::Dataset(format!("{}: empty expression", ann.image_id)));
        }
        let key = ann.expression.as_slice();
        let bucket = by_expr.entry(key).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        if bucket.iter().any(|a| a.image_id == ann.image_id) {
            return Err(GresError::Dataset(format!(
                "image {} appears twice for expression {:?}",
                ann.image_id, ann.expression
            )));
        }
        bucket.push(ann);
    }

    let mut pool: Vec<&String> = Vec::new();
    let mut seen = HashSet::new();
    for id in negatives_pool {
        if seen.insert(id) {
            pool.push(id);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_group = positives_per_group(n);
    let mut groups = Vec::new();

    for expr in order {
        let positives = &by_expr[expr];
        let referred: HashSet<&str> = positives.iter().map(|a| a.image_id.as_str()).collect();
        let eligible: Vec<&String> = pool
            .iter()
            .copied()
            .filter(|id| !referred.contains(id.as_str()))
            .collect();

        for chunk in positives.chunks(per_group) {
            let wanted = chunk.len().max(n.saturating_sub(chunk.len()));
            if eligible.len() < wanted {
                return Err(GresError::Dataset(format!(
                    "negatives pool has {} eligible images for {:?}, {wanted} required",
                    eligible.len(),
                    expr
                )));
            }
            let mut images: Vec<ImageEntry> = chunk
                .iter()
                .map(|a| ImageEntry {
                    path: a.image_id.clone(),
                    mask_path: Some(a.mask_path.clone()),
                    is_positive: true,
                })
                .collect();
            let picks = index::sample(&mut rng, eligible.len(), wanted);
            images.extend(picks.iter().map(|i| ImageEntry {
                path: eligible[i].clone(),
                mask_path: None,
                is_positive: false,
            }));
            if n > 1 {
                images.shuffle(&mut rng);
            }
            for part in images.chunks(n) {
                groups.push(GroupEntry {
                    group_id: format!("g{:05}", groups.len()),
                    expression: expr.to_vec(),
                    images: part.to_vec(),
                });
            }
        }
    }

    let vocab = build_vocab(groups.iter().map(|g| g.expression.as_slice()));
    Ok(DatasetManifest {
        group_size: n,
        vocab,
        groups,
        split,
    })
}

/// Re-partitions decoded groups into groups of size `n`, keeping every image
/// with its expression.
///
/// Images are pooled per expression (in first-appearance order) and dealt out
/// with `⌊n/2⌋` positives per group for even `n`; odd sizes alternate between
/// `⌊n/2⌋` and `⌈n/2⌉` positives. Leftover images that cannot complete a
/// group are dropped.
pub fn regroup_samples(groups: &[GroupSample], n: usize) -> Result<Vec<GroupSample>> {
    if n == 0 {
        return Err(GresError::Dataset("group size must be at least 1".into()));
    }
    let mut order: Vec<&[String]> = Vec::new();
    let mut pools: HashMap<&[String], (Vec<_>, Vec<_>)> = HashMap::new();
    for g in groups {
        let entry = pools.entry(g.expression.as_slice()).or_insert_with(|| {
            order.push(g.expression.as_slice());
            (Vec::new(), Vec::new())
        });
        for r in &g.images {
            if r.is_positive {
                entry.0.push(r);
            } else {
                entry.1.push(r);
            }
        }
    }

    let mut out = Vec::new();
    for expr in order {
        let (pos, neg) = &pools[expr];
        let (mut pi, mut ni) = (0, 0);
        let mut k = 0usize;
        loop {
            let want_pos = if n % 2 == 0 { n / 2 } else { n / 2 + (k % 2) };
            let want_neg = n - want_pos;
            if pi + want_pos > pos.len() || ni + want_neg > neg.len() {
                break;
            }
            // Alternate positive/negative slots so position carries no label.
            let mut images = Vec::with_capacity(n);
            let (mut p, mut q) = (0, 0);
            while p < want_pos || q < want_neg {
                if p < want_pos && (p <= q || q >= want_neg) {
                    images.push(pos[pi + p].clone());
                    p += 1;
                } else {
                    images.push(neg[ni + q].clone());
                    q += 1;
                }
            }
            pi += want_pos;
            ni += want_neg;
            out.push(GroupSample {
                group_id: format!("g{:05}", out.len()),
                expression: expr.to_vec(),
                images,
            });
            k += 1;
        }
    }
    Ok(out)
}
