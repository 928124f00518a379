//! Treatment protocols in block notation (`5T2C5T`, `1C10T1C`, `NT`) and
//! their expansion into impulsive dose schedules.
//!
//! Grammar: `NT | (<uint> ("T"|"C"))+`, case-insensitive, no whitespace.
//! `<n>T` is `n` TMZ cycles, `<n>C` is `n` CAR-T injections.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Block {
    /// `cycles` TMZ cycles.
    Tmz { cycles: u32 },
    /// `injections` CAR-T injections; `dose` (cells) and `gap` (days)
    /// override the schedule defaults when set.
    CarT { injections: u32, dose: Option<f64>, gap: Option<f64> },
}

impl Block {
    pub fn tmz(cycles: u32) -> Self {
        Block::Tmz { cycles }
    }

    pub fn car_t(injections: u32) -> Self {
        Block::CarT { injections, dose: None, gap: None }
    }
}

/// A protocol as an ordered list of blocks. The empty list is "NT".
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub blocks: Vec<Block>,
}

impl ProtocolSpec {
    pub fn parse(notation: &str) -> Result<Self> {
        notation.parse()
    }

    pub fn no_treatment() -> Self {
        ProtocolSpec::default()
    }

    pub fn tmz_cycles(&self) -> u32 {
        self.blocks
            .iter()
            .map(|b| match b {
                Block::Tmz { cycles } => *cycles,
                Block::CarT { .. } => 0,
            })
            .sum()
    }

    pub fn car_t_injections(&self) -> u32 {
        self.blocks
            .iter()
            .map(|b| match b {
                Block::CarT { injections, .. } => *injections,
                Block::Tmz { .. } => 0,
            })
            .sum()
    }

    /// Lays the blocks out back to back and emits one event per dose,
    /// ordered by time with TMZ before CAR-T at equal times.
    ///
    /// A TMZ block of `L` cycles occupies `L * cycle_len` days with a dose
    /// on each of the first `dosing_days` days of every cycle. The next
    /// block starts the day after that window. CAR-T injections are
    /// `gap` days apart and the block after them starts `gap` days after
    /// the last injection.
    pub fn expand(&self, schedule: &Schedule) -> Vec<DoseEvent> {
        let mut events = Vec::new();
        let mut cursor = 0.0;
        for block in &self.blocks {
            match *block {
                Block::Tmz { cycles } => {
                    for cycle in 0..cycles {
                        let start = cursor + f64::from(cycle) * schedule.cycle_len;
                        for day in 0..schedule.dosing_days {
                            events.push(DoseEvent {
                                time: start + f64::from(day),
                                kind: DoseKind::Tmz { e0: schedule.e0 },
                            });
                        }
                    }
                    cursor += f64::from(cycles) * schedule.cycle_len;
                }
                Block::CarT { injections, dose, gap } => {
                    if injections == 0 {
                        continue;
                    }
                    let v = dose.unwrap_or(schedule.dose_per_injection);
                    let gap = gap.unwrap_or(schedule.cart_gap);
                    for i in 0..injections {
                        events.push(DoseEvent {
                            time: cursor + f64::from(i) * gap,
                            kind: DoseKind::CarT { v },
                        });
                    }
                    cursor += f64::from(injections) * gap;
                }
            }
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.kind.order().cmp(&b.kind.order())));
        events
    }
}

impl FromStr for ProtocolSpec {
    type Err = Error;

    fn from_str(notation: &str) -> Result<Self> {
        if notation.is_empty() {
            return Err(Error::Parse { position: 0, message: "empty protocol".into() });
        }
        if notation.eq_ignore_ascii_case("NT") {
            return Ok(ProtocolSpec::no_treatment());
        }
        let bytes = notation.as_bytes();
        let mut blocks = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            let start = pos;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            if pos == start {
                return Err(Error::Parse {
                    position: pos,
                    message: format!("expected a count, found {:?}", bytes[pos] as char),
                });
            }
            let count: u32 = notation[start..pos].parse().map_err(|_| Error::Parse {
                position: start,
                message: "count out of range".into(),
            })?;
            let Some(&unit) = bytes.get(pos) else {
                return Err(Error::Parse {
                    position: pos,
                    message: "expected 'T' or 'C' after count".into(),
                });
            };
            blocks.push(match unit.to_ascii_uppercase() {
                b'T' => Block::tmz(count),
                b'C' => Block::car_t(count),
                other => {
                    return Err(Error::Parse {
                        position: pos,
                        message: format!("expected 'T' or 'C', found {:?}", other as char),
                    })
                }
            });
            pos += 1;
        }
        Ok(ProtocolSpec { blocks })
    }
}

impl fmt::Display for ProtocolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.blocks.is_empty() {
            return f.write_str("NT");
        }
        for block in &self.blocks {
            match block {
                Block::Tmz { cycles } => write!(f, "{cycles}T")?,
                Block::CarT { injections, .. } => write!(f, "{injections}C")?,
            }
        }
        Ok(())
    }
}

/// Patient-independent dosing parameters used by [`ProtocolSpec::expand`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// TMZ efficacy added per administration.
    pub e0: f64,
    /// Length of one TMZ cycle (days).
    pub cycle_len: f64,
    /// Administration days at the start of each cycle.
    pub dosing_days: u32,
    /// Days between CAR-T injections.
    pub cart_gap: f64,
    /// CAR-T cells per injection.
    pub dose_per_injection: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { e0: 1.0, cycle_len: 28.0, dosing_days: 5, cart_gap: 7.0, dose_per_injection: 5e8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DoseKind {
    /// `E += e0`.
    Tmz { e0: f64 },
    /// `C += v` cells.
    CarT { v: f64 },
}

impl DoseKind {
    fn order(&self) -> u8 {
        match self {
            DoseKind::Tmz { .. } => 0,
            DoseKind::CarT { .. } => 1,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            DoseKind::Tmz { .. } => "TMZ",
            DoseKind::CarT { .. } => "CART",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseEvent {
    /// Administration time (days).
    pub time: f64,
    pub kind: DoseKind,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn times(events: &[DoseEvent], tmz: bool) -> Vec<f64> {
        events
            .iter()
            .filter(|e| matches!(e.kind, DoseKind::Tmz { .. }) == tmz)
            .map(|e| e.time)
            .collect()
    }

    #[test]
    fn parses_named_protocols() {
        assert_eq!(ProtocolSpec::parse("NT").unwrap().blocks, vec![]);
        assert_eq!(ProtocolSpec::parse("nt").unwrap().blocks, vec![]);
        assert_eq!(
            ProtocolSpec::parse("1C5T1C5T").unwrap().blocks,
            vec![Block::car_t(1), Block::tmz(5), Block::car_t(1), Block::tmz(5)]
        );
        assert_eq!(ProtocolSpec::parse("10T2C").unwrap().blocks, vec![Block::tmz(10), Block::car_t(2)]);
        assert_eq!(
            ProtocolSpec::parse("5t2c5t").unwrap().blocks,
            vec![Block::tmz(5), Block::car_t(2), Block::tmz(5)]
        );
        assert_eq!(ProtocolSpec::parse("2C10T").unwrap().blocks, vec![Block::car_t(2), Block::tmz(10)]);
    }

    #[test]
    fn parse_errors_carry_position() {
        let cases = [("", 0), ("T", 0), ("5", 1), ("5X", 1), ("5T 2C", 2), ("5T2", 3), ("N", 0)];
        for (text, at) in cases {
            match ProtocolSpec::parse(text) {
                Err(Error::Parse { position, .. }) => assert_eq!(position, at, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn format_round_trips_named_protocols() {
        for name in [
            "NT", "2C", "10T", "5T2C5T", "2C10T", "1C5T1C5T", "5T1C5T1C", "10T2C", "1C10T1C",
        ] {
            assert_eq!(ProtocolSpec::parse(name).unwrap().to_string(), name);
        }
    }

    #[test]
    fn ten_tmz_cycles() {
        let ev = ProtocolSpec::parse("10T").unwrap().expand(&Schedule::default());
        assert_eq!(ev.len(), 50);
        let t = times(&ev, true);
        let want: Vec<f64> =
            (0..10).flat_map(|c| (0..5).map(move |d| (28 * c + d) as f64)).collect();
        assert_eq!(t, want);
        assert_eq!(*t.last().unwrap(), 256.0);
        assert!(ev.iter().all(|e| e.kind == DoseKind::Tmz { e0: 1.0 }));
    }

    #[test]
    fn two_car_t_injections() {
        let schedule = Schedule { dose_per_injection: 5e8, cart_gap: 7.0, ..Schedule::default() };
        let ev = ProtocolSpec::parse("2C").unwrap().expand(&schedule);
        assert_eq!(
            ev,
            vec![
                DoseEvent { time: 0.0, kind: DoseKind::CarT { v: 5e8 } },
                DoseEvent { time: 7.0, kind: DoseKind::CarT { v: 5e8 } },
            ]
        );
        assert!(ProtocolSpec::parse("NT").unwrap().expand(&schedule).is_empty());
    }

    #[test]
    fn sequential_layout() {
        let s = Schedule::default();
        let ev = ProtocolSpec::parse("5T2C5T").unwrap().expand(&s);
        assert_eq!(times(&ev, false), vec![140.0, 147.0]);
        let tmz = times(&ev, true);
        assert_eq!(tmz[25], 154.0);
        assert_eq!(*tmz.last().unwrap(), 154.0 + 4.0 * 28.0 + 4.0);

        let ev = ProtocolSpec::parse("1C5T1C5T").unwrap().expand(&s);
        assert_eq!(times(&ev, false), vec![0.0, 147.0]);
        assert_eq!(times(&ev, true)[0], 7.0);
        assert_eq!(times(&ev, true)[25], 154.0);

        let ev = ProtocolSpec::parse("2C10T").unwrap().expand(&s);
        assert_eq!(times(&ev, true)[0], 14.0);

        let ev = ProtocolSpec::parse("10T2C").unwrap().expand(&s);
        assert_eq!(times(&ev, false), vec![280.0, 287.0]);
    }

    #[test]
    fn simultaneous_events_put_tmz_first() {
        let s = Schedule { cart_gap: 0.0, ..Schedule::default() };
        let spec = ProtocolSpec {
            blocks: vec![Block::car_t(1), Block::tmz(1)],
        };
        let ev = spec.expand(&s);
        assert_eq!(ev[0].time, 0.0);
        assert!(matches!(ev[0].kind, DoseKind::Tmz { .. }));
        assert!(matches!(ev[1].kind, DoseKind::CarT { .. }));
    }

    #[test]
    fn block_overrides() {
        let spec = ProtocolSpec {
            blocks: vec![Block::CarT { injections: 3, dose: Some(1e7), gap: Some(2.0) }],
        };
        let ev = spec.expand(&Schedule::default());
        assert_eq!(ev.iter().map(|e| e.time).collect::<Vec<_>>(), vec![0.0, 2.0, 4.0]);
        assert!(ev.iter().all(|e| e.kind == DoseKind::CarT { v: 1e7 }));
    }

    fn arb_protocol() -> impl Strategy<Value = ProtocolSpec> {
        prop::collection::vec((0u32..12, any::<bool>()), 1..6).prop_map(|blocks| ProtocolSpec {
            blocks: blocks
                .into_iter()
                .map(|(n, t)| if t { Block::tmz(n) } else { Block::car_t(n) })
                .collect(),
        })
    }

    proptest! {
        #[test]
        fn format_parse_identity(spec in arb_protocol()) {
            prop_assert_eq!(ProtocolSpec::parse(&spec.to_string()).unwrap(), spec);
        }

        #[test]
        fn tmz_block_counts(cycles in 0u32..20) {
            let ev = ProtocolSpec { blocks: vec![Block::tmz(cycles)] }.expand(&Schedule::default());
            prop_assert_eq!(ev.len() as u32, 5 * cycles);
            if cycles > 0 {
                let last = ev.last().unwrap().time;
                prop_assert!(last < 28.0 * f64::from(cycles));
                prop_assert!(last >= 28.0 * f64::from(cycles - 1));
            }
        }

        #[test]
        fn car_t_total_dose(spec in arb_protocol(), v in 1e6f64..1e9) {
            let s = Schedule { dose_per_injection: v, ..Schedule::default() };
            let ev = spec.expand(&s);
            let total: f64 = ev.iter().filter_map(|e| match e.kind {
                DoseKind::CarT { v } => Some(v),
                _ => None,
            }).sum();
            let n = f64::from(spec.car_t_injections());
            prop_assert!((total - n * v).abs() <= 1e-9 * n * v);
            prop_assert!(ev.windows(2).all(|w| w[0].time <= w[1].time));
        }
    }
}
