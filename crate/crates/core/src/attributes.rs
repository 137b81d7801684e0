//! Clothing color and gender attributes.
//!
//! Colors are classified by a nearest-centroid vote in CIELAB: every patch
//! pixel votes for the closest palette entry (ΔE76) and a color's score is
//! its share of the votes. Learned classifiers plug in through
//! [`ExternalScores`], which replace the baseline color scores and are the
//! only source of gender.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maskops::ColorPatch;

pub const DEFAULT_SECOND_COLOR_MIN_SHARE: f64 = 0.15;
const SCORE_SUM_TOL: f64 = 1e-6;
const MIN_CENTROID_SEPARATION: f64 = 1.0;

const DEFAULT_PALETTE_JSON: &str = include_str!("../data/default_palette.json");

#[derive(Debug, Error)]
pub enum AttributeError {
    #[error("palette: {0}")]
    Palette(String),
    #[error("palette file {path}: {source}")]
    PaletteIo { path: String, source: std::io::Error },
    #[error("color patch is empty")]
    EmptyPatch,
    #[error("malformed {slot} scores: {reason}")]
    Scores { slot: &'static str, reason: String },
}

// D65 reference white, 2° observer.
const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

fn srgb_to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// 8-bit sRGB to CIELAB (D65).
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (fx, fy, fz) = (lab_f(x / WHITE[0]), lab_f(y / WHITE[1]), lab_f(z / WHITE[2]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn delta_e76(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub name: String,
    pub srgb: [u8; 3],
    #[serde(skip)]
    pub lab: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CultureColorPalette {
    entries: Vec<PaletteEntry>,
}

impl Default for CultureColorPalette {
    fn default() -> Self {
        Self::from_json(DEFAULT_PALETTE_JSON).expect("built-in palette is valid")
    }
}

impl CultureColorPalette {
    pub fn new(anchors: impl IntoIterator<Item = (String, [u8; 3])>) -> Result<Self, AttributeError> {
        let entries: Vec<PaletteEntry> = anchors
            .into_iter()
            .map(|(name, srgb)| PaletteEntry {
                lab: srgb_to_lab(srgb),
                name,
                srgb,
            })
            .collect();
        if entries.len() < 2 {
            return Err(AttributeError::Palette(format!(
                "need at least 2 colors, got {}",
                entries.len()
            )));
        }
        for (i, a) in entries.iter().enumerate() {
            for b in &entries[i + 1..] {
                if a.name == b.name {
                    return Err(AttributeError::Palette(format!("duplicate color '{}'", a.name)));
                }
                let de = delta_e76(&a.lab, &b.lab);
                if de < MIN_CENTROID_SEPARATION {
                    return Err(AttributeError::Palette(format!(
                        "'{}' and '{}' are only ΔE {de:.3} apart",
                        a.name, b.name
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn from_json(json: &str) -> Result<Self, AttributeError> {
        let raw: Vec<PaletteEntry> = serde_json::from_str(json).map_err(|e| AttributeError::Palette(e.to_string()))?;
        Self::new(raw.into_iter().map(|e| (e.name, e.srgb)))
    }

    pub fn load(path: &Path) -> Result<Self, AttributeError> {
        let text = std::fs::read_to_string(path).map_err(|source| AttributeError::PaletteIo {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("palette serializes")
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    pub fn srgb(&self, name: &str) -> Option<[u8; 3]> {
        self.index_of(name).map(|i| self.entries[i].srgb)
    }

    /// Index of the closest centroid; the earliest entry wins exact ties.
    pub fn nearest(&self, lab: &[f64; 3]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, e) in self.entries.iter().enumerate() {
            let d = delta_e76(lab, &e.lab);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorScore {
    pub name: String,
    pub score: f64,
}

/// Scores for every palette color, highest first, ties in palette order.
pub fn classify_color(patch: &ColorPatch, palette: &CultureColorPalette) -> Result<Vec<ColorScore>, AttributeError> {
    if patch.pixels.is_empty() {
        return Err(AttributeError::EmptyPatch);
    }
    let mut votes = vec![0usize; palette.len()];
    let mut memo: HashMap<[u8; 3], usize> = HashMap::new();
    for px in &patch.pixels {
        let idx = *memo.entry(*px).or_insert_with(|| palette.nearest(&srgb_to_lab(*px)));
        votes[idx] += 1;
    }
    let total = patch.pixels.len() as f64;
    let mut ranked: Vec<(usize, usize)> = votes.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked
        .into_iter()
        .map(|(i, n)| ColorScore {
            name: palette.entries[i].name.clone(),
            score: n as f64 / total,
        })
        .collect())
}

pub fn top_color(ranked: &[ColorScore]) -> Option<&str> {
    ranked.first().filter(|c| c.score > 0.0).map(|c| c.name.as_str())
}

/// The runner-up color when it holds at least `min_share` of the votes.
pub fn second_color(ranked: &[ColorScore], min_share: f64) -> Option<String> {
    ranked
        .get(1)
        .filter(|c| c.score > 0.0 && c.score >= min_share)
        .map(|c| c.name.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "male",
            Gender::Female => "female",
        })
    }
}

impl std::str::FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "male" => Ok(Gender::Male),
            "female" => Ok(Gender::Female),
            other => Err(format!("unknown gender '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "call")]
pub enum GenderCall {
    Known { gender: Gender, confidence: f64 },
    Indeterminate,
}

impl GenderCall {
    pub fn gender(&self) -> Option<Gender> {
        match self {
            GenderCall::Known { gender, .. } => Some(*gender),
            GenderCall::Indeterminate => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Baseline,
    External,
}

/// Classifier outputs attached to a detection in the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExternalScores {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_color: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leg_color: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<BTreeMap<String, f64>>,
}

fn check_distribution<'a>(slot: &'static str, scores: impl IntoIterator<Item = &'a f64>) -> Result<(), AttributeError> {
    let mut sum = 0.0;
    for &p in scores {
        if !(0.0..=1.0).contains(&p) {
            return Err(AttributeError::Scores {
                slot,
                reason: format!("probability {p} outside [0, 1]"),
            });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > SCORE_SUM_TOL {
        return Err(AttributeError::Scores {
            slot,
            reason: format!("probabilities sum to {sum}"),
        });
    }
    Ok(())
}

impl ExternalScores {
    /// Checks distributions, gender keys and that color names exist in `palette`.
    pub fn validate(&self, palette: &CultureColorPalette) -> Result<(), AttributeError> {
        for (slot, map) in [
            ("color", &self.color),
            ("second_color", &self.second_color),
            ("leg_color", &self.leg_color),
        ] {
            if let Some(map) = map {
                check_distribution(slot, map.values())?;
                if let Some(unknown) = map.keys().find(|k| !palette.contains(k)) {
                    return Err(AttributeError::Scores {
                        slot,
                        reason: format!("color '{unknown}' is not in the palette"),
                    });
                }
            }
        }
        if let Some(g) = &self.gender {
            gender_map(g)?;
        }
        Ok(())
    }
}

fn gender_map(raw: &BTreeMap<String, f64>) -> Result<BTreeMap<Gender, f64>, AttributeError> {
    check_distribution("gender", raw.values())?;
    raw.iter()
        .map(|(k, &p)| {
            k.parse::<Gender>()
                .map(|g| (g, p))
                .map_err(|reason| AttributeError::Scores { slot: "gender", reason })
        })
        .collect()
}

/// Ranks an external distribution: score descending, ties by palette order.
fn rank_external(map: &BTreeMap<String, f64>, palette: &CultureColorPalette) -> Vec<ColorScore> {
    let mut ranked: Vec<ColorScore> = map
        .iter()
        .map(|(name, &score)| ColorScore {
            name: name.clone(),
            score,
        })
        .collect();
    let order = |n: &str| palette.index_of(n).unwrap_or(usize::MAX);
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| order(&a.name).cmp(&order(&b.name)))
            .then_with(|| a.name.cmp(&b.name))
    });
    ranked
}

/// Per-detection attribute record flowing into the cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScores {
    /// Torso colors, ranked. Empty when no torso patch could be cut.
    pub color_scores: Vec<ColorScore>,
    pub second_color_scores: Option<Vec<ColorScore>>,
    pub leg_color_scores: Option<Vec<ColorScore>>,
    pub gender_scores: Option<BTreeMap<Gender, f64>>,
    pub provenance: Provenance,
}

impl AttributeScores {
    pub fn torso_color(&self) -> Option<&str> {
        top_color(&self.color_scores)
    }

    /// Explicit second-color scores win; otherwise the torso runner-up.
    pub fn torso_second_color(&self, min_share: f64) -> Option<String> {
        match &self.second_color_scores {
            Some(ranked) => top_color(ranked).map(str::to_string),
            None => second_color(&self.color_scores, min_share),
        }
    }

    pub fn leg_color(&self) -> Option<&str> {
        self.leg_color_scores.as_deref().and_then(top_color)
    }
}

pub fn classify_gender(scores: &AttributeScores) -> Result<GenderCall, AttributeError> {
    let Some(map) = &scores.gender_scores else {
        return Ok(GenderCall::Indeterminate);
    };
    check_distribution("gender", map.values())?;
    let male = map.get(&Gender::Male).copied().unwrap_or(0.0);
    let female = map.get(&Gender::Female).copied().unwrap_or(0.0);
    Ok(if male > female {
        GenderCall::Known {
            gender: Gender::Male,
            confidence: male,
        }
    } else if female > male {
        GenderCall::Known {
            gender: Gender::Female,
            confidence: female,
        }
    } else {
        GenderCall::Indeterminate
    })
}

/// Combines baseline color votes with optional external scores. External
/// color slots replace the baseline; gender comes only from external scores.
pub fn merge_scores(
    baseline_torso: Option<Vec<ColorScore>>,
    baseline_legs: Option<Vec<ColorScore>>,
    external: Option<&ExternalScores>,
    palette: &CultureColorPalette,
) -> Result<AttributeScores, AttributeError> {
    let ext = external.cloned().unwrap_or_default();
    ext.validate(palette)?;
    let provenance = if ext.color.is_some() {
        Provenance::External
    } else {
        Provenance::Baseline
    };
    let color_scores = match &ext.color {
        Some(map) => rank_external(map, palette),
        None => baseline_torso.unwrap_or_default(),
    };
    let leg_color_scores = match &ext.leg_color {
        Some(map) => Some(rank_external(map, palette)),
        None => baseline_legs,
    };
    Ok(AttributeScores {
        color_scores,
        second_color_scores: ext.second_color.as_ref().map(|m| rank_external(m, palette)),
        leg_color_scores,
        gender_scores: ext.gender.as_ref().map(gender_map).transpose()?,
        provenance,
    })
}
