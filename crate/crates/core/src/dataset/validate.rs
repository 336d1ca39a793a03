use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::read_mask;
use super::{DatasetManifest, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    GroupSize,
    Ratio,
    EmptyExpression,
    DuplicateImage,
    MissingFile,
    MissingMask,
    MaskNotBinary,
    EmptyPositiveMask,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::GroupSize => "group size mismatch",
            ViolationKind::Ratio => "ratio",
            ViolationKind::EmptyExpression => "empty expression",
            ViolationKind::DuplicateImage => "duplicate image",
            ViolationKind::MissingFile => "missing file",
            ViolationKind::MissingMask => "missing mask",
            ViolationKind::MaskNotBinary => "mask not binary",
            ViolationKind::EmptyPositiveMask => "empty positive mask",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub group_id: String,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group_id: String,
    pub size: usize,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub groups: Vec<GroupSummary>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    /// `0` iff there are no violations.
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.is_clean())
    }
}

/// Checks structure and annotation invariants of a manifest.
///
/// File-level checks (existence, mask content) resolve paths against `root`.
/// Problems are collected as report entries rather than returned as errors.
pub fn validate_manifest(manifest: &DatasetManifest, root: &Path) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = manifest.group_size;
    for g in &manifest.groups {
        let mut flag = |kind, detail: String| {
            report.violations.push(Violation {
                group_id: g.group_id.clone(),
                kind,
                detail,
            })
        };
        let positives = g.images.iter().filter(|i| i.is_positive).count();
        let negatives = g.images.len() - positives;

        if g.images.len() != n {
            flag(
                ViolationKind::GroupSize,
                format!("expected {n} images, found {}", g.images.len()),
            );
        }
        if g.expression.is_empty() {
            flag(ViolationKind::EmptyExpression, String::new());
        }
        // Training groups should be balanced; odd sizes may lean one extra positive.
        if manifest.split == Split::Train && positives > negatives + g.images.len() % 2 {
            flag(
                ViolationKind::Ratio,
                format!("{positives} positives vs {negatives} negatives"),
            );
        }
        let mut seen = HashSet::new();
        for img in &g.images {
            if !seen.insert(img.path.as_str()) {
                flag(ViolationKind::DuplicateImage, img.path.clone());
            }
            if !root.join(&img.path).is_file() {
                flag(ViolationKind::MissingFile, img.path.clone());
            }
            match &img.mask_path {
                None if img.is_positive => flag(ViolationKind::MissingMask, img.path.clone()),
                None => {}
                Some(mp) => match read_mask(&root.join(mp)) {
                    Err(e) => flag(ViolationKind::MissingFile, format!("{mp}: {e}")),
                    Ok((_, _, bits, mixed)) => {
                        if mixed {
                            flag(ViolationKind::MaskNotBinary, mp.clone());
                        }
                        let foreground = bits.contains(&1);
                        if img.is_positive && !foreground {
                            flag(ViolationKind::EmptyPositiveMask, mp.clone());
                        }
                        if !img.is_positive && foreground {
                            flag(
                                ViolationKind::EmptyPositiveMask,
                                format!("{mp}: negative image has foreground"),
                            );
                        }
                    }
                },
            }
        }
        report.groups.push(GroupSummary {
            group_id: g.group_id.clone(),
            size: g.images.len(),
            positives,
            negatives,
        });
    }
    report
}
