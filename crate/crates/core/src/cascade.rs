//! Linear attribute cascade.
//!
//! Filters run in a fixed order: height, torso color, torso second color
//! (when queried), gender, leg color (when queried). The cascade stops as
//! soon as at most one candidate remains; later filters never see the frame.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::{
    classify_gender, AttributeScores, CultureColorPalette, Gender, GenderCall, DEFAULT_SECOND_COLOR_MIN_SHARE,
};
use crate::bbox::BBox;
use crate::geometry::HeightStatus;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("query file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed query: {0}")]
    Json(#[from] serde_json::Error),
    #[error("height range [{min}, {max}] is empty or inverted")]
    InvertedRange { min: f64, max: f64 },
    #[error("{field} color '{name}' is not in the palette")]
    UnknownColor { field: &'static str, name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticQuery {
    pub height_min_cm: f64,
    pub height_max_cm: f64,
    pub torso_color: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torso_second_color: Option<String>,
    pub gender: Gender,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leg_color: Option<String>,
}

impl SemanticQuery {
    pub fn validate(&self, palette: &CultureColorPalette) -> Result<(), QueryError> {
        if !(self.height_min_cm.is_finite()
            && self.height_max_cm.is_finite()
            && self.height_min_cm < self.height_max_cm)
        {
            return Err(QueryError::InvertedRange {
                min: self.height_min_cm,
                max: self.height_max_cm,
            });
        }
        let colors = [
            ("torso", Some(&self.torso_color)),
            ("torso second", self.torso_second_color.as_ref()),
            ("leg", self.leg_color.as_ref()),
        ];
        for (field, name) in colors {
            if let Some(name) = name.filter(|n| !palette.contains(n)) {
                return Err(QueryError::UnknownColor {
                    field,
                    name: name.clone(),
                });
            }
        }
        Ok(())
    }
}

pub fn parse_query(json: &str, palette: &CultureColorPalette) -> Result<SemanticQuery, QueryError> {
    let q: SemanticQuery = serde_json::from_str(json)?;
    q.validate(palette)?;
    Ok(q)
}

pub fn load_query(path: &Path, palette: &CultureColorPalette) -> Result<SemanticQuery, QueryError> {
    let text = std::fs::read_to_string(path).map_err(|source| QueryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_query(&text, palette)
}

/// One detected person as seen by the filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub detection_id: String,
    pub estimated_height_cm: f64,
    pub height_status: HeightStatus,
    pub attribute_scores: AttributeScores,
    pub bbox: BBox,
}

impl Candidate {
    pub fn gender_call(&self) -> GenderCall {
        classify_gender(&self.attribute_scores).unwrap_or(GenderCall::Indeterminate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Height,
    TorsoColor,
    TorsoSecondColor,
    Gender,
    LegColor,
    Exhausted,
}

impl Stage {
    pub fn label(&self) -> &'static str {
        match self {
            Stage::Height => "height",
            Stage::TorsoColor => "torso_color",
            Stage::TorsoSecondColor => "torso_second_color",
            Stage::Gender => "gender",
            Stage::LegColor => "leg_color",
            Stage::Exhausted => "exhausted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSlot {
    Torso,
    TorsoSecond,
    Leg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeConfig {
    pub second_color_min_share: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            second_color_min_share: DEFAULT_SECOND_COLOR_MIN_SHARE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub frame_id: u64,
    pub survivors: Vec<Candidate>,
    pub decision_stage: Stage,
    pub unique: bool,
}

/// Inclusive range test; implausible heights never pass.
pub fn height_filter(cands: Vec<Candidate>, query: &SemanticQuery) -> Vec<Candidate> {
    cands
        .into_iter()
        .filter(|c| {
            c.height_status == HeightStatus::Plausible
                && c.estimated_height_cm >= query.height_min_cm
                && c.estimated_height_cm <= query.height_max_cm
        })
        .collect()
}

pub fn color_filter(
    cands: Vec<Candidate>,
    color_name: &str,
    slot: ColorSlot,
    config: &CascadeConfig,
) -> Vec<Candidate> {
    cands
        .into_iter()
        .filter(|c| {
            let s = &c.attribute_scores;
            match slot {
                ColorSlot::Torso => s.torso_color() == Some(color_name),
                ColorSlot::TorsoSecond => {
                    s.torso_second_color(config.second_color_min_share).as_deref() == Some(color_name)
                }
                ColorSlot::Leg => s.leg_color() == Some(color_name),
            }
        })
        .collect()
}

/// Candidates without a gender call pass through.
pub fn gender_filter(cands: Vec<Candidate>, gender: Gender) -> Vec<Candidate> {
    cands
        .into_iter()
        .filter(|c| match c.gender_call() {
            GenderCall::Known { gender: g, .. } => g == gender,
            GenderCall::Indeterminate => {
                log::info!("detection {}: gender indeterminate, kept", c.detection_id);
                true
            }
        })
        .collect()
}

pub fn retrieve(
    frame_id: u64,
    cands: Vec<Candidate>,
    query: &SemanticQuery,
    config: &CascadeConfig,
) -> RetrievalResult {
    retrieve_observed(frame_id, cands, query, config, &mut |_, _, _| {})
}

/// [`retrieve`] reporting `(stage, input count, output count)` for every
/// filter actually applied.
pub fn retrieve_observed(
    frame_id: u64,
    cands: Vec<Candidate>,
    query: &SemanticQuery,
    config: &CascadeConfig,
    observer: &mut dyn FnMut(Stage, usize, usize),
) -> RetrievalResult {
    type Filter<'a> = Box<dyn Fn(Vec<Candidate>) -> Vec<Candidate> + 'a>;
    let mut stages: Vec<(Stage, Filter)> = vec![
        (Stage::Height, Box::new(|c| height_filter(c, query))),
        (
            Stage::TorsoColor,
            Box::new(|c| color_filter(c, &query.torso_color, ColorSlot::Torso, config)),
        ),
    ];
    if let Some(second) = &query.torso_second_color {
        stages.push((
            Stage::TorsoSecondColor,
            Box::new(move |c| color_filter(c, second, ColorSlot::TorsoSecond, config)),
        ));
    }
    stages.push((Stage::Gender, Box::new(|c| gender_filter(c, query.gender))));
    if let Some(leg) = &query.leg_color {
        stages.push((
            Stage::LegColor,
            Box::new(move |c| color_filter(c, leg, ColorSlot::Leg, config)),
        ));
    }

    let mut survivors = cands;
    for (stage, filter) in &stages {
        let before = survivors.len();
        survivors = filter(survivors);
        observer(*stage, before, survivors.len());
        if survivors.len() <= 1 {
            return RetrievalResult {
                frame_id,
                unique: survivors.len() == 1,
                survivors,
                decision_stage: *stage,
            };
        }
    }
    RetrievalResult {
        frame_id,
        survivors,
        decision_stage: Stage::Exhausted,
        unique: false,
    }
}

/// One survivor in the results stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivorRecord {
    pub detection_id: String,
    pub height_cm: f64,
    pub bbox: BBox,
    pub top_color: Option<String>,
    pub gender: Option<Gender>,
}

/// One line of the results JSON Lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub frame_id: u64,
    pub survivors: Vec<SurvivorRecord>,
    pub decision_stage: Stage,
    pub unique: bool,
}

impl From<&RetrievalResult> for ResultRecord {
    fn from(r: &RetrievalResult) -> Self {
        Self {
            frame_id: r.frame_id,
            survivors: r
                .survivors
                .iter()
                .map(|c| SurvivorRecord {
                    detection_id: c.detection_id.clone(),
                    height_cm: c.estimated_height_cm,
                    bbox: c.bbox,
                    top_color: c.attribute_scores.torso_color().map(str::to_string),
                    gender: c.gender_call().gender(),
                })
                .collect(),
            decision_stage: r.decision_stage,
            unique: r.unique,
        }
    }
}
