//! Field-by-field parsing of `/v1/synthesize` bodies, so every invalid
//! field is reported rather than only the first serde error.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use kinsynth::face_geometry::LandmarkSet;
use kinsynth::inference::{SynthesisControls, SynthesisRequest};
use kinsynth::networks::{AgeStage, Gender};
use kinsynth::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        FieldError {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn from_error(e: Error) -> Self {
        match e {
            Error::Validation { field, message } => FieldError { field, message },
            other => FieldError::new("body", other.to_string()),
        }
    }
}

/// JSON body of `POST /v1/synthesize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizeBody {
    /// Base64 PNG (or JPEG).
    pub parent_male: String,
    pub parent_female: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks_male: Option<LandmarkSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks_female: Option<LandmarkSet>,
    pub vector: String,
    pub age_stage: AgeStage,
    pub gender: Gender,
    pub seed: u64,
    pub noise_scale: f64,
    pub noise_components: Vec<u8>,
    pub decoder_noise: bool,
}

const FIELDS: [&str; 11] = [
    "parent_male",
    "parent_female",
    "landmarks_male",
    "landmarks_female",
    "vector",
    "age_stage",
    "gender",
    "seed",
    "noise_scale",
    "noise_components",
    "decoder_noise",
];

fn string(obj: &Map<String, Value>, key: &str, errors: &mut Vec<FieldError>) -> Option<String> {
    match obj.get(key) {
        None | Some(Value::Null) => {
            errors.push(FieldError::new(key, "is required"));
            None
        }
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            errors.push(FieldError::new(key, "must be a string"));
            None
        }
    }
}

fn optional<T: for<'de> Deserialize<'de>>(obj: &Map<String, Value>, key: &str, errors: &mut Vec<FieldError>) -> Option<T> {
    match obj.get(key) {
        None | Some(Value::Null) => None,
        Some(v) => match serde_json::from_value(v.clone()) {
            Ok(t) => Some(t),
            Err(e) => {
                errors.push(FieldError::new(key, e.to_string()));
                None
            }
        },
    }
}

/// Validates every field of a synthesize body and decodes the parents.
pub fn parse_synthesize(obj: &Map<String, Value>) -> Result<SynthesisRequest, Vec<FieldError>> {
    let mut errors = Vec::new();
    for key in obj.keys() {
        if !FIELDS.contains(&key.as_str()) {
            errors.push(FieldError::new(key.as_str(), "unknown field"));
        }
    }
    let defaults = SynthesisControls::default();
    let parent_male = string(obj, "parent_male", &mut errors);
    let parent_female = string(obj, "parent_female", &mut errors);
    let vector = string(obj, "vector", &mut errors);
    let age_stage = match obj.get("age_stage") {
        None | Some(Value::Null) => Some(defaults.age_stage),
        Some(Value::String(s)) => s
            .parse::<AgeStage>()
            .map_err(|e| {
                let mut fe = FieldError::from_error(e);
                fe.field = "age_stage".into();
                errors.push(fe)
            })
            .ok(),
        Some(_) => {
            errors.push(FieldError::new("age_stage", "must be one of \"A\", \"B\", \"C\", \"D\""));
            None
        }
    };
    let gender = match obj.get("gender") {
        None | Some(Value::Null) => Some(defaults.gender),
        Some(Value::String(s)) => s.parse::<Gender>().map_err(|e| errors.push(FieldError::from_error(e))).ok(),
        Some(_) => {
            errors.push(FieldError::new("gender", "must be \"M\" or \"F\""));
            None
        }
    };
    let seed = match obj.get("seed") {
        None | Some(Value::Null) => Some(defaults.seed),
        Some(v) => v.as_u64().or_else(|| {
            errors.push(FieldError::new("seed", "must be a non-negative integer"));
            None
        }),
    };
    let noise_scale = match obj.get("noise_scale") {
        None | Some(Value::Null) => Some(defaults.noise_scale),
        Some(v) => v.as_f64().or_else(|| {
            errors.push(FieldError::new("noise_scale", "must be a number"));
            None
        }),
    };
    let noise_components = match obj.get("noise_components") {
        None | Some(Value::Null) => Some(Vec::new()),
        Some(Value::Array(items)) => {
            let parsed: Option<Vec<u8>> = items
                .iter()
                .map(|v| v.as_u64().filter(|n| (1..=5).contains(n)).map(|n| n as u8))
                .collect();
            parsed.or_else(|| {
                errors.push(FieldError::new("noise_components", "must be a list of component numbers in 1..5"));
                None
            })
        }
        Some(_) => {
            errors.push(FieldError::new("noise_components", "must be a list of component numbers in 1..5"));
            None
        }
    };
    let decoder_noise = match obj.get("decoder_noise") {
        None | Some(Value::Null) => Some(false),
        Some(Value::Bool(b)) => Some(*b),
        Some(_) => {
            errors.push(FieldError::new("decoder_noise", "must be a boolean"));
            None
        }
    };
    let landmarks_male = optional::<LandmarkSet>(obj, "landmarks_male", &mut errors);
    let landmarks_female = optional::<LandmarkSet>(obj, "landmarks_female", &mut errors);
    let body = SynthesizeBody {
        parent_male: parent_male.unwrap_or_default(),
        parent_female: parent_female.unwrap_or_default(),
        landmarks_male,
        landmarks_female,
        vector: vector.unwrap_or_default(),
        age_stage: age_stage.unwrap_or(defaults.age_stage),
        gender: gender.unwrap_or(defaults.gender),
        seed: seed.unwrap_or_default(),
        noise_scale: noise_scale.unwrap_or_default(),
        noise_components: noise_components.unwrap_or_default(),
        decoder_noise: decoder_noise.unwrap_or_default(),
    };
    // Value checks run even after type errors; a field already reported
    // is not reported twice.
    match crate::request_from(&body) {
        Ok(req) if errors.is_empty() => Ok(req),
        Ok(_) => Err(errors),
        Err(more) => {
            for e in more {
                if !errors.iter().any(|x| x.field == e.field) {
                    errors.push(e);
                }
            }
            Err(errors)
        }
    }
}
