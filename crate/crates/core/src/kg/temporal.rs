use serde::{Deserialize, Serialize};

use super::{EntityKind, Fact, KgError, KnowledgeGraph, LinkKind, TemporalConfig, Unit};
use crate::synth::{City, CitySeries, WeatherVar, SLOTS_PER_DAY};

/// Kind of temporal context value a fact refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TempKind {
    Hour,
    Day,
    Jam,
    Tprt,
    Rain,
    Wind,
}

impl TempKind {
    pub const ALL: [TempKind; 6] = [
        TempKind::Hour,
        TempKind::Day,
        TempKind::Jam,
        TempKind::Tprt,
        TempKind::Rain,
        TempKind::Wind,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TempKind::Hour => "Hour",
            TempKind::Day => "Day",
            TempKind::Jam => "Jam",
            TempKind::Tprt => "Tprt",
            TempKind::Rain => "Rain",
            TempKind::Wind => "Wind",
        }
    }

    pub fn entity(self) -> (&'static str, EntityKind) {
        match self {
            TempKind::Hour => ("hour", EntityKind::Hour),
            TempKind::Day => ("day", EntityKind::Day),
            TempKind::Jam => ("jam", EntityKind::Jam),
            TempKind::Tprt => ("tprt", EntityKind::Tprt),
            TempKind::Rain => ("rain", EntityKind::Rain),
            TempKind::Wind => ("wind", EntityKind::Wind),
        }
    }

    fn weather(self) -> Option<WeatherVar> {
        match self {
            TempKind::Tprt => Some(WeatherVar::Tprt),
            TempKind::Rain => Some(WeatherVar::Rain),
            TempKind::Wind => Some(WeatherVar::Wind),
            _ => None,
        }
    }
}

/// `cos(2π·hour/24)` for hours 1..=24.
pub fn encode_hour(hour: u32) -> Result<f64, KgError> {
    if !(1..=24).contains(&hour) {
        return Err(KgError::OutOfRange(hour as i64));
    }
    Ok((std::f64::consts::TAU * hour as f64 / 24.0).cos())
}

/// `cos(2π·day/7)` for days 1..=7 (Monday = 1).
pub fn encode_day(day: u32) -> Result<f64, KgError> {
    if !(1..=7).contains(&day) {
        return Err(KgError::OutOfRange(day as i64));
    }
    Ok((std::f64::consts::TAU * day as f64 / 7.0).cos())
}

/// Hour of day in 1..=24 (midnight maps to 24).
pub fn hour_of_slot(t: usize) -> u32 {
    let h = ((t % SLOTS_PER_DAY) / 6) as u32;
    if h == 0 {
        24
    } else {
        h
    }
}

/// Day of week in 1..=7 (Monday = 1).
pub fn day_of_slot(t: usize) -> u32 {
    crate::synth::weekday_of_slot(t)
}

/// Where the time-varying attribute of one temporal fact comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttrSource {
    Hour,
    Day,
    /// Mean jam of `road` over the trailing `slots` slots (inclusive of `t`).
    Jam { road: usize, slots: usize },
    /// Mean of one weather variable at `station` over the trailing `slots`.
    Weather { var: WeatherVar, station: usize, slots: usize },
    /// Value of `kind` at `t - lag`; undefined before the series start.
    Lag {
        kind: TempKind,
        road: usize,
        station: Option<usize>,
        lag: usize,
    },
}

/// Attribute recipe for every temporal fact, aligned with the fact list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSchema {
    pub sources: Vec<AttrSource>,
    pub history_slots: usize,
}

fn trailing_mean(v: &[f64], t: usize, slots: usize) -> f64 {
    v[t + 1 - slots..=t].iter().sum::<f64>() / slots as f64
}

fn station_var<'a>(series: &'a CitySeries, station: usize, var: WeatherVar) -> &'a [f64] {
    series.weather[station]
        .var(var)
        .expect("nearest station measures the variable")
}

impl TemporalSchema {
    pub fn attributes_at(&self, series: &CitySeries, t: usize) -> Result<Vec<Option<f64>>, KgError> {
        if t + 1 < self.history_slots || t >= series.n_slots {
            return Err(KgError::InsufficientHistory {
                t,
                needed: self.history_slots,
            });
        }
        self.sources
            .iter()
            .map(|s| {
                Ok(match *s {
                    AttrSource::Hour => Some(encode_hour(hour_of_slot(t))?),
                    AttrSource::Day => Some(encode_day(day_of_slot(t))?),
                    AttrSource::Jam { road, slots } => {
                        Some(trailing_mean(series.jam.road(road), t, slots))
                    }
                    AttrSource::Weather { var, station, slots } => {
                        Some(trailing_mean(station_var(series, station, var), t, slots))
                    }
                    AttrSource::Lag {
                        kind,
                        road,
                        station,
                        lag,
                    } => {
                        if t < lag {
                            None
                        } else {
                            let u = t - lag;
                            Some(match kind {
                                TempKind::Hour => encode_hour(hour_of_slot(u))?,
                                TempKind::Day => encode_day(day_of_slot(u))?,
                                TempKind::Jam => series.jam.get(road, u),
                                w => station_var(
                                    series,
                                    station.expect("weather lag has a station"),
                                    w.weather().expect("weather kind"),
                                )[u],
                            })
                        }
                    }
                })
            })
            .collect()
    }
}

/// Emits the temporal unit with attributes taken at slot `t` and returns the
/// schema that recomputes them for any other slot.
pub fn build_temporal_unit(
    kg: &mut KnowledgeGraph,
    city: &City,
    series: &CitySeries,
    cfg: &TemporalConfig,
    t: usize,
) -> Result<TemporalSchema, KgError> {
    cfg.validate()?;
    if city.roads.is_empty() {
        return Err(KgError::EmptyCity);
    }
    let slot = cfg.slot_minutes as usize;
    let roads: Vec<_> = (0..city.roads.len())
        .map(|i| kg.register_entity(&format!("road_{i}"), EntityKind::Road))
        .collect::<Result<_, _>>()?;
    for (i, &id) in roads.iter().enumerate() {
        kg.set_entity_attribute(id, city.roads[i].free_flow)?;
    }
    let mut singles = Vec::new();
    for k in TempKind::ALL {
        let (name, kind) = k.entity();
        singles.push(kg.register_entity(name, kind)?);
    }
    let single = |k: TempKind| singles[TempKind::ALL.iter().position(|&x| x == k).unwrap()];
    let stations: Vec<[usize; 3]> = (0..city.roads.len())
        .map(|r| {
            WeatherVar::ALL.map(|v| city.nearest_station(r, v).expect("every variable measured"))
        })
        .collect();
    let station_of = |r: usize, v: WeatherVar| stations[r][v as usize];

    let mut facts = Vec::new();
    let mut sources = Vec::new();
    for (r, &road) in roads.iter().enumerate() {
        let mut push = |rel: String, tail, src: AttrSource| -> Result<(), KgError> {
            let rel = kg.register_relation(&rel)?;
            facts.push(Fact::new(road, rel, tail, None));
            sources.push(src);
            Ok(())
        };
        push("hasHour".into(), single(TempKind::Hour), AttrSource::Hour)?;
        push("hasDay".into(), single(TempKind::Day), AttrSource::Day)?;
        for &p in &cfg.past_minutes {
            let slots = p as usize / slot;
            push(format!("hasJam{p}"), single(TempKind::Jam), AttrSource::Jam { road: r, slots })?;
            for (k, v) in [
                (TempKind::Tprt, WeatherVar::Tprt),
                (TempKind::Rain, WeatherVar::Rain),
                (TempKind::Wind, WeatherVar::Wind),
            ] {
                push(
                    format!("has{}{p}", k.name()),
                    single(k),
                    AttrSource::Weather {
                        var: v,
                        station: station_of(r, v),
                        slots,
                    },
                )?;
            }
        }
        for &link in &cfg.link_kinds {
            for k in TempKind::ALL {
                push(
                    format!("temporallyLink{}{}", k.name(), link.name()),
                    single(k),
                    AttrSource::Lag {
                        kind: k,
                        road: r,
                        station: k.weather().map(|v| station_of(r, v)),
                        lag: link.lag_minutes() / slot,
                    },
                )?;
            }
        }
    }
    let schema = TemporalSchema {
        sources,
        history_slots: cfg.history_slots(),
    };
    let attrs = schema.attributes_at(series, t)?;
    for (mut f, a) in facts.into_iter().zip(attrs) {
        f.attribute = a;
        kg.add_fact(Unit::Temporal, f)?;
    }
    kg.config.temporal = Some(cfg.clone());
    Ok(schema)
}

/// Link kinds referenced by a `temporallyLink…` relation name.
pub fn link_of_relation(name: &str) -> Option<LinkKind> {
    let rest = name.strip_prefix("temporallyLink")?;
    LinkKind::ALL.into_iter().find(|k| rest.ends_with(k.name()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodings() {
        assert!((encode_hour(24).unwrap() - 1.0).abs() < 1e-15);
        assert!(encode_hour(6).unwrap().abs() < 1e-15);
        assert!((encode_day(7).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(encode_hour(0), Err(KgError::OutOfRange(0)));
        assert_eq!(encode_day(8), Err(KgError::OutOfRange(8)));
    }

    #[test]
    fn slot_calendar() {
        assert_eq!(hour_of_slot(0), 24);
        assert_eq!(hour_of_slot(6), 1);
        assert_eq!(hour_of_slot(143), 23);
        assert_eq!(day_of_slot(0), 3);
        assert_eq!(day_of_slot(144 * 4), 7);
        assert_eq!(day_of_slot(144 * 5), 1);
        assert_eq!(day_of_slot(144 * 7), 3);
    }

    #[test]
    fn link_names() {
        assert_eq!(link_of_relation("temporallyLinkJamDay"), Some(LinkKind::Day));
        assert_eq!(link_of_relation("hasJam10"), None);
    }
}
