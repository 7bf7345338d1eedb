//! Bit-true software oracle for Tsetlin-machine inference: clause
//! evaluation over masked literals, positive/negative vote counts, and the
//! sign comparison that yields the classification. Every generated circuit
//! is verified against this model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TmError {
    #[error("expected {expected} {what}, got {got}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("clause count must be even and >= 2, got {0}")]
    OddClauseCount(usize),
    #[error("feature count must be >= 1")]
    NoFeatures,
    #[error("clause {clause}: exclude mask has {got} bits, expected {expected}")]
    BadMaskWidth {
        clause: usize,
        expected: usize,
        got: usize,
    },
    #[error("clause {clause}: exclude mask {mask:?} is not valid hex")]
    BadMaskHex { clause: usize, mask: String },
    #[error("stimulus line {line}: {text:?} is not a valid hex feature vector")]
    BadStimulusLine { line: usize, text: String },
    #[error("json: {0}")]
    Json(String),
}

/// Inference configuration: sizes plus the exclude-bit abstraction of the
/// automata action outputs (1 = exclude the literal, 0 = include it).
///
/// Literal indexing: bit `2m` of a clause row gates feature `f[m]`, bit
/// `2m+1` gates `!f[m]`. Clauses `0..C/2` vote positively, the rest
/// negatively.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TmConfig {
    features: usize,
    clauses: usize,
    /// `clauses` rows of `2 * features` bits.
    exclude: Vec<Vec<bool>>,
}

impl TmConfig {
    pub fn new(features: usize, clauses: usize, exclude: Vec<Vec<bool>>) -> Result<Self, TmError> {
        if features == 0 {
            return Err(TmError::NoFeatures);
        }
        if clauses < 2 || clauses % 2 != 0 {
            return Err(TmError::OddClauseCount(clauses));
        }
        if exclude.len() != clauses {
            return Err(TmError::SizeMismatch {
                what: "exclude rows",
                expected: clauses,
                got: exclude.len(),
            });
        }
        for (j, row) in exclude.iter().enumerate() {
            if row.len() != 2 * features {
                return Err(TmError::BadMaskWidth {
                    clause: j,
                    expected: 2 * features,
                    got: row.len(),
                });
            }
        }
        Ok(TmConfig {
            features,
            clauses,
            exclude,
        })
    }

    /// All-excluded configuration: every clause is vacuous and outputs 1.
    pub fn all_excluded(features: usize, clauses: usize) -> Result<Self, TmError> {
        let row = vec![true; 2 * features];
        Self::new(features, clauses, vec![row; clauses])
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn clauses(&self) -> usize {
        self.clauses
    }

    pub fn exclude_row(&self, clause: usize) -> &[bool] {
        &self.exclude[clause]
    }

    pub fn exclude(&self) -> &[Vec<bool>] {
        &self.exclude
    }

    /// Clause polarity under the fixed first-half-positive convention.
    pub fn polarity(&self, clause: usize) -> i8 {
        if clause < self.clauses / 2 {
            1
        } else {
            -1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComparatorOutcome {
    Greater,
    Equal,
    Less,
}

impl ComparatorOutcome {
    pub fn mirror(self) -> Self {
        match self {
            ComparatorOutcome::Greater => ComparatorOutcome::Less,
            ComparatorOutcome::Less => ComparatorOutcome::Greater,
            ComparatorOutcome::Equal => ComparatorOutcome::Equal,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ComparatorOutcome::Greater => "GREATER",
            ComparatorOutcome::Equal => "EQUAL",
            ComparatorOutcome::Less => "LESS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    InClass,
    NotInClass,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceResult {
    pub clause_bits: Vec<bool>,
    pub pos_count: usize,
    pub neg_count: usize,
    pub comparator_outcome: ComparatorOutcome,
    pub decision: Decision,
}

/// AND over all masked literals:
/// `prod_m (ex[2m] | f[m]) & (ex[2m+1] | !f[m])`.
/// An all-excluded row returns 1.
pub fn clause_eval(f: &[bool], exclude_row: &[bool]) -> Result<bool, TmError> {
    if exclude_row.len() != 2 * f.len() {
        return Err(TmError::SizeMismatch {
            what: "exclude bits",
            expected: 2 * f.len(),
            got: exclude_row.len(),
        });
    }
    Ok(f.iter()
        .enumerate()
        .all(|(m, &fm)| (exclude_row[2 * m] || fm) && (exclude_row[2 * m + 1] || !fm)))
}

pub fn popcount_oracle(bits: &[bool]) -> usize {
    bits.iter().filter(|&&b| b).count()
}

pub fn compare_oracle(a: usize, b: usize) -> ComparatorOutcome {
    use std::cmp::Ordering::*;
    match a.cmp(&b) {
        Greater => ComparatorOutcome::Greater,
        Equal => ComparatorOutcome::Equal,
        Less => ComparatorOutcome::Less,
    }
}

/// Full inference: clause bits, per-polarity counts, sign comparison.
/// Ties decide in favor of the class.
pub fn infer(f: &[bool], config: &TmConfig) -> Result<InferenceResult, TmError> {
    if f.len() != config.features {
        return Err(TmError::SizeMismatch {
            what: "features",
            expected: config.features,
            got: f.len(),
        });
    }
    let clause_bits: Vec<bool> = (0..config.clauses)
        .map(|j| clause_eval(f, &config.exclude[j]))
        .collect::<Result<_, _>>()?;
    let half = config.clauses / 2;
    let pos_count = popcount_oracle(&clause_bits[..half]);
    let neg_count = popcount_oracle(&clause_bits[half..]);
    let comparator_outcome = compare_oracle(pos_count, neg_count);
    let decision = match comparator_outcome {
        ComparatorOutcome::Greater | ComparatorOutcome::Equal => Decision::InClass,
        ComparatorOutcome::Less => Decision::NotInClass,
    };
    Ok(InferenceResult {
        clause_bits,
        pos_count,
        neg_count,
        comparator_outcome,
        decision,
    })
}

// ---------------------------------------------------------------------------
// JSON configuration and stimulus files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TmConfigFile {
    #[serde(rename = "F")]
    features: usize,
    #[serde(rename = "C")]
    clauses: usize,
    /// One hex string per clause, `2F` bits, MSB = literal index `2F-1`.
    exclude: Vec<String>,
    polarity: PolarityScheme,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
enum PolarityScheme {
    #[serde(rename = "first-half-positive")]
    FirstHalfPositive,
}

fn bits_to_hex(bits: &[bool]) -> String {
    // MSB of the string is the highest literal index.
    let digits = bits.len().div_ceil(4);
    let mut out = String::with_capacity(digits);
    for d in (0..digits).rev() {
        let mut nibble = 0u8;
        for b in 0..4 {
            let idx = d * 4 + b;
            if idx < bits.len() && bits[idx] {
                nibble |= 1 << b;
            }
        }
        out.push(char::from_digit(nibble as u32, 16).unwrap());
    }
    out
}

fn hex_to_bits(s: &str, width: usize) -> Option<Vec<bool>> {
    let mut bits = vec![false; width];
    let digits: Vec<u8> = s
        .chars()
        .map(|c| c.to_digit(16).map(|d| d as u8))
        .collect::<Option<_>>()?;
    if digits.len() != width.div_ceil(4) {
        return None;
    }
    for (pos, &d) in digits.iter().rev().enumerate() {
        for b in 0..4 {
            let idx = pos * 4 + b;
            if d & (1 << b) != 0 {
                if idx >= width {
                    return None; // set bit beyond the declared width
                }
                bits[idx] = true;
            }
        }
    }
    Some(bits)
}

impl TmConfig {
    pub fn to_json_string(&self) -> String {
        let file = TmConfigFile {
            features: self.features,
            clauses: self.clauses,
            exclude: self.exclude.iter().map(|row| bits_to_hex(row)).collect(),
            polarity: PolarityScheme::FirstHalfPositive,
            meta: BTreeMap::new(),
        };
        serde_json::to_string_pretty(&file).expect("config serialization cannot fail")
    }

    pub fn from_json_str(s: &str) -> Result<Self, TmError> {
        let file: TmConfigFile =
            serde_json::from_str(s).map_err(|e| TmError::Json(e.to_string()))?;
        if file.features == 0 {
            return Err(TmError::NoFeatures);
        }
        let width = 2 * file.features;
        if file.exclude.len() != file.clauses {
            return Err(TmError::SizeMismatch {
                what: "exclude rows",
                expected: file.clauses,
                got: file.exclude.len(),
            });
        }
        let exclude = file
            .exclude
            .iter()
            .enumerate()
            .map(|(j, row)| {
                hex_to_bits(row, width).ok_or_else(|| TmError::BadMaskHex {
                    clause: j,
                    mask: row.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        TmConfig::new(file.features, file.clauses, exclude)
    }
}

/// Parses a stimulus file: one hex feature vector per line (blank lines and
/// `#` comments skipped), `F` bits each, MSB = feature `F-1`.
pub fn parse_stimulus(text: &str, features: usize) -> Result<Vec<Vec<bool>>, TmError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bits = hex_to_bits(line, features).ok_or_else(|| TmError::BadStimulusLine {
            line: i + 1,
            text: line.to_string(),
        })?;
        out.push(bits);
    }
    Ok(out)
}

/// Formats one feature vector as a stimulus line.
pub fn stimulus_line(f: &[bool]) -> String {
    bits_to_hex(f)
}
