//! Temporal redundancy: a load is redundant when every byte it reads holds
//! the value the previous load of that byte saw.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::context::ContextHandle;
use crate::shadow::ShadowTable;
use crate::trace::{FpClass, Load};

pub const DEFAULT_EPSILON: f64 = 0.01;

/// Precise for integer/pointer loads, approximate for floating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RedundancyClass {
    Precise,
    Approx,
}

impl RedundancyClass {
    pub fn of(fp: FpClass) -> Self {
        if fp.is_fp() {
            RedundancyClass::Approx
        } else {
            RedundancyClass::Precise
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RedundancyClass::Precise => "precise",
            RedundancyClass::Approx => "approx",
        }
    }
}

/// Byte and instance counters for one pair or object.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedundancyCounters {
    pub redundant_bytes_precise: u64,
    pub redundant_bytes_approx: u64,
    pub total_bytes_precise: u64,
    pub total_bytes_approx: u64,
    pub redundant_instances: u64,
    pub total_instances: u64,
    pub fp_exact_instances: u64,
}

impl RedundancyCounters {
    pub fn record(&mut self, bytes: u64, class: RedundancyClass, redundant: bool, fp_exact: bool) {
        match class {
            RedundancyClass::Precise => {
                self.total_bytes_precise += bytes;
                if redundant {
                    self.redundant_bytes_precise += bytes;
                }
            }
            RedundancyClass::Approx => {
                self.total_bytes_approx += bytes;
                if redundant {
                    self.redundant_bytes_approx += bytes;
                }
            }
        }
        self.total_instances += 1;
        if redundant {
            self.redundant_instances += 1;
        }
        if fp_exact {
            self.fp_exact_instances += 1;
        }
    }

    pub fn add(&mut self, o: &RedundancyCounters) {
        self.redundant_bytes_precise += o.redundant_bytes_precise;
        self.redundant_bytes_approx += o.redundant_bytes_approx;
        self.total_bytes_precise += o.total_bytes_precise;
        self.total_bytes_approx += o.total_bytes_approx;
        self.redundant_instances += o.redundant_instances;
        self.total_instances += o.total_instances;
        self.fp_exact_instances += o.fp_exact_instances;
    }

    pub fn redundant_bytes(&self) -> u64 {
        self.redundant_bytes_precise + self.redundant_bytes_approx
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes_precise + self.total_bytes_approx
    }

    pub fn is_consistent(&self) -> bool {
        self.redundant_bytes_precise <= self.total_bytes_precise
            && self.redundant_bytes_approx <= self.total_bytes_approx
            && self.redundant_instances <= self.total_instances
            && self.fp_exact_instances <= self.total_instances
    }

    /// Redundant instances over all instances, as a percentage.
    pub fn instance_percentage(&self) -> f64 {
        if self.total_instances == 0 {
            0.0
        } else {
            100.0 * self.redundant_instances as f64 / self.total_instances as f64
        }
    }
}

/// Program-wide byte counters split by operand class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramTotals {
    pub total_nonfp_bytes: u64,
    pub total_fp_bytes: u64,
    pub redundant_nonfp_bytes: u64,
    pub redundant_fp_bytes: u64,
}

impl ProgramTotals {
    pub fn record(&mut self, bytes: u64, class: RedundancyClass, redundant: bool) {
        match class {
            RedundancyClass::Precise => {
                self.total_nonfp_bytes += bytes;
                if redundant {
                    self.redundant_nonfp_bytes += bytes;
                }
            }
            RedundancyClass::Approx => {
                self.total_fp_bytes += bytes;
                if redundant {
                    self.redundant_fp_bytes += bytes;
                }
            }
        }
    }

    pub fn add(&mut self, o: &ProgramTotals) {
        self.total_nonfp_bytes += o.total_nonfp_bytes;
        self.total_fp_bytes += o.total_fp_bytes;
        self.redundant_nonfp_bytes += o.redundant_nonfp_bytes;
        self.redundant_fp_bytes += o.redundant_fp_bytes;
    }

    pub fn is_consistent(&self) -> bool {
        self.redundant_nonfp_bytes <= self.total_nonfp_bytes && self.redundant_fp_bytes <= self.total_fp_bytes
    }
}

/// A ratio whose denominator may be zero. `defined == false` means there
/// were no loads of the class; `value` is then 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fraction {
    pub value: f64,
    pub defined: bool,
}

impl Fraction {
    pub fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Fraction {
                value: 0.0,
                defined: false,
            }
        } else {
            Fraction {
                value: num as f64 / den as f64,
                defined: true,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionPair {
    pub precise: Fraction,
    pub approx: Fraction,
}

pub fn pair_fraction(record: &RedundancyCounters, totals: &ProgramTotals) -> FractionPair {
    FractionPair {
        precise: Fraction::ratio(record.redundant_bytes_precise, totals.total_nonfp_bytes),
        approx: Fraction::ratio(record.redundant_bytes_approx, totals.total_fp_bytes),
    }
}

pub fn program_fraction(totals: &ProgramTotals) -> FractionPair {
    FractionPair {
        precise: Fraction::ratio(totals.redundant_nonfp_bytes, totals.total_nonfp_bytes),
        approx: Fraction::ratio(totals.redundant_fp_bytes, totals.total_fp_bytes),
    }
}

pub fn approx_equal_f64(a: f64, b: f64, epsilon: f64) -> bool {
    if a.to_bits() == b.to_bits() {
        return true;
    }
    if !a.is_finite() || !b.is_finite() {
        return false;
    }
    (a - b).abs() <= epsilon * a.abs().max(b.abs())
}

pub fn approx_equal_f32(a: f32, b: f32, epsilon: f64) -> bool {
    if a.to_bits() == b.to_bits() {
        return true;
    }
    approx_equal_f64(a as f64, b as f64, epsilon)
}

/// Compares two equally sized value spans under the rules of `fp`.
pub fn values_match(old: &[u8], new: &[u8], fp: FpClass, epsilon: f64) -> bool {
    if old.len() != new.len() {
        return false;
    }
    match fp {
        FpClass::NonFp => old == new,
        FpClass::F32 => old.chunks_exact(4).zip(new.chunks_exact(4)).all(|(a, b)| {
            let a = f32::from_le_bytes(a.try_into().expect("4-byte chunk"));
            let b = f32::from_le_bytes(b.try_into().expect("4-byte chunk"));
            approx_equal_f32(a, b, epsilon)
        }),
        FpClass::F64 => old.chunks_exact(8).zip(new.chunks_exact(8)).all(|(a, b)| {
            let a = f64::from_le_bytes(a.try_into().expect("8-byte chunk"));
            let b = f64::from_le_bytes(b.try_into().expect("8-byte chunk"));
            approx_equal_f64(a, b, epsilon)
        }),
    }
}

/// Key of a per-thread pair row. `c_old` is `None` when the start byte had
/// never been loaded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ThreadPairKey {
    pub c_old: Option<ContextHandle>,
    pub c_new: ContextHandle,
    pub scope: Option<ContextHandle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadVerdict {
    pub redundant: bool,
    pub class: RedundancyClass,
    /// Context and timestamp of the previous load of the start byte.
    pub prior: Option<(ContextHandle, u64)>,
    pub scope: Option<ContextHandle>,
    pub fp_exact: bool,
}

#[derive(Debug, Clone)]
pub struct TemporalDetector {
    epsilon: f64,
    pairs: HashMap<ThreadPairKey, RedundancyCounters>,
    totals: ProgramTotals,
}

impl TemporalDetector {
    pub fn new(epsilon: f64) -> Self {
        TemporalDetector {
            epsilon,
            pairs: HashMap::new(),
            totals: ProgramTotals::default(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn totals(&self) -> &ProgramTotals {
        &self.totals
    }

    pub fn pairs(&self) -> &HashMap<ThreadPairKey, RedundancyCounters> {
        &self.pairs
    }

    pub fn into_parts(self) -> (HashMap<ThreadPairKey, RedundancyCounters>, ProgramTotals) {
        (self.pairs, self.totals)
    }

    /// Classifies `load`, refreshes its shadow span and charges the pair row.
    ///
    /// `scope` is asked for the pair's scope given the prior context and
    /// timestamp; it is only called when a prior load exists.
    pub fn process_load<E>(
        &mut self,
        load: &Load,
        shadow: &mut ShadowTable,
        ctx: ContextHandle,
        ts: u64,
        scope: impl FnOnce(ContextHandle, u64) -> Result<Option<ContextHandle>, E>,
    ) -> Result<LoadVerdict, E> {
        let new = load.value.as_bytes();
        let cells = shadow.read_span(load.addr, new.len());
        let prior = cells.first().filter(|c| c.present).map(|c| (c.ctx, c.ts));
        let all_present = cells.iter().all(|c| c.present);
        let class = RedundancyClass::of(load.fp_class);
        let (redundant, fp_exact) = if all_present {
            let mut old = [0u8; crate::trace::MAX_LOAD_SIZE];
            for (o, c) in old.iter_mut().zip(cells.iter()) {
                *o = c.value;
            }
            let old = &old[..new.len()];
            let exact = old == new;
            let redundant = exact || values_match(old, new, load.fp_class, self.epsilon);
            (redundant, exact && load.fp_class.is_fp())
        } else {
            (false, false)
        };
        let scope = match prior {
            Some((c_old, t_old)) => scope(c_old, t_old)?,
            None => None,
        };
        shadow.write_span(load.addr, new, ctx, ts);

        let bytes = new.len() as u64;
        let key = ThreadPairKey {
            c_old: prior.map(|p| p.0),
            c_new: ctx,
            scope,
        };
        self.pairs
            .entry(key)
            .or_default()
            .record(bytes, class, redundant, fp_exact);
        self.totals.record(bytes, class, redundant);
        Ok(LoadVerdict {
            redundant,
            class,
            prior,
            scope,
            fp_exact,
        })
    }
}
