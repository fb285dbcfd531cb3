//! Scoring of trained models on toy data: component inheritance measured
//! with the toy oracle, age control measured with the age classifier, and
//! loss-curve summaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::Kind;

use crate::data::toy::{attribute_components, toy_component_oracle, Attribution};
use crate::data::FaceRecord;
use crate::face_geometry::{component_boxes, Component, ControlVector, Parent};
use crate::inference::{SynthesisControls, Synthesizer};
use crate::networks::{AgeStage, Gender};
use crate::tensor::faces_to_tensor;
use crate::{Error, Result};

/// Components scored for inheritance.
pub const SCORED_COMPONENTS: [Component; 4] = [
    Component::LeftEyeBrow,
    Component::RightEyeBrow,
    Component::Mouth,
    Component::Profile,
];

/// Parents whose descriptors for a component are closer than this are not
/// told apart by the oracle, so that component is skipped for the pair.
pub const MIN_PARENT_DISTANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub male: usize,
    pub female: usize,
    pub vector: ControlVector,
    pub seed: u64,
}

/// `count` trials over the given male and female pools, each with a
/// uniformly drawn control vector.
pub fn sample_trials(males: usize, females: usize, count: usize, seed: u64) -> Result<Vec<Trial>> {
    if males == 0 || females == 0 {
        return Err(Error::EmptyDataset("trials need at least one face of each gender".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| Trial {
            male: rng.random_range(0..males),
            female: rng.random_range(0..females),
            vector: ControlVector::from_code(rng.random_range(0..32u8)),
            seed: rng.random(),
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InheritanceReport {
    pub correct: usize,
    pub scored: usize,
    pub ambiguous: usize,
    pub skipped: usize,
    /// `(correct, scored)` per entry of [`SCORED_COMPONENTS`].
    pub per_component: Vec<(usize, usize)>,
}

impl InheritanceReport {
    pub fn accuracy(&self) -> f64 {
        if self.scored == 0 {
            0.0
        } else {
            self.correct as f64 / self.scored as f64
        }
    }
}

/// Splits records into (male, female) pools.
pub fn by_gender(records: &[FaceRecord]) -> (Vec<&FaceRecord>, Vec<&FaceRecord>) {
    records.iter().partition(|r| r.label.gender == Gender::M)
}

/// Synthesizes a child for every trial (stage C, the male branch labels,
/// zero noise) and checks each scored component against the parent `v`
/// designates. Ambiguous attributions count as wrong.
pub fn inheritance_accuracy(synth: &Synthesizer, records: &[FaceRecord], trials: &[Trial]) -> Result<InheritanceReport> {
    let layout = component_boxes(synth.canvas())?;
    let (males, females) = by_gender(records);
    let mut report = InheritanceReport {
        per_component: vec![(0, 0); SCORED_COMPONENTS.len()],
        ..Default::default()
    };
    for t in trials {
        let (m, f) = (&males[t.male].face, &females[t.female].face);
        let controls = SynthesisControls {
            vector: t.vector,
            age_stage: AgeStage::C,
            gender: Gender::M,
            seed: t.seed,
            ..Default::default()
        };
        let child = synth.synthesize_aligned(m, f, &controls)?.face;
        let verdicts = attribute_components(&child, m, f, &layout)?;
        let dm = toy_component_oracle(m, &layout)?;
        let df = toy_component_oracle(f, &layout)?;
        for (k, c) in SCORED_COMPONENTS.iter().enumerate() {
            let i = c.index();
            if dm[i].distance(&df[i]) < MIN_PARENT_DISTANCE {
                report.skipped += 1;
                continue;
            }
            let want = match t.vector.source(*c) {
                Parent::Male => Attribution::Male,
                Parent::Female => Attribution::Female,
            };
            report.scored += 1;
            report.per_component[k].1 += 1;
            if verdicts[i] == Attribution::Ambiguous {
                report.ambiguous += 1;
            }
            if verdicts[i] == want {
                report.correct += 1;
                report.per_component[k].0 += 1;
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgeControlReport {
    pub correct: usize,
    pub total: usize,
    /// `(correct, total)` per stage A..D.
    pub per_stage: Vec<(usize, usize)>,
}

impl AgeControlReport {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Synthesizes every trial at all four stages (gender alternating by
/// trial) and asks the model's age classifier for the stage.
pub fn age_control_accuracy(synth: &Synthesizer, records: &[FaceRecord], trials: &[Trial]) -> Result<AgeControlReport> {
    let (males, females) = by_gender(records);
    let mut report = AgeControlReport {
        per_stage: vec![(0, 0); 4],
        ..Default::default()
    };
    for (n, t) in trials.iter().enumerate() {
        let mut children = Vec::with_capacity(4);
        for stage in AgeStage::ALL {
            let controls = SynthesisControls {
                vector: t.vector,
                age_stage: stage,
                gender: if n % 2 == 0 { Gender::M } else { Gender::F },
                seed: t.seed,
                ..Default::default()
            };
            children.push(
                synth
                    .synthesize_aligned(&males[t.male].face, &females[t.female].face, &controls)?
                    .face,
            );
        }
        let refs: Vec<_> = children.iter().collect();
        let x = faces_to_tensor(&refs, Kind::Float)?;
        let pred = tch::no_grad(|| synth.models().age.forward(&x).argmax(1, false));
        for (k, p) in Vec::<i64>::try_from(&pred)?.into_iter().enumerate() {
            report.total += 1;
            report.per_stage[k].1 += 1;
            if p as usize == k {
                report.correct += 1;
                report.per_stage[k].0 += 1;
            }
        }
    }
    Ok(report)
}

/// Trailing moving average of `values` at 1-based position `at`, over up
/// to `window` values ending there.
pub fn trailing_mean(values: &[f64], at: usize, window: usize) -> Option<f64> {
    if at == 0 || at > values.len() || window == 0 {
        return None;
    }
    let start = at.saturating_sub(window);
    let slice = &values[start..at];
    Some(slice.iter().sum::<f64>() / slice.len() as f64)
}
