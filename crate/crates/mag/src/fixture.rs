//! Synthetic input files, so the whole pipeline runs without external data.
//!
//! The case curve is `base + gain * covid[t - lag] + weekly(t)`: a lagged copy
//! of the planted `covid` trends column plus a weekly cycle. With the default
//! lag, the value that decides a window's target sits on the window's first
//! day. The weekly cycle is also visible in the testing column, so the phase
//! of the target day can be read off the window.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use mag_core::rng;
use rand::Rng;

use crate::artifacts::write_file;
use crate::error::Result;
use crate::table::{Column, FeatureTable, Source, DATE_FORMAT, TRENDS_KEYWORDS};

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub days: usize,
    pub news_dim: usize,
    /// Days between a `covid` value and the case count it drives.
    pub lag: usize,
    pub seed: u64,
    pub start: NaiveDate,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            days: 800,
            news_dim: 8,
            lag: 9,
            seed: 7,
            start: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
        }
    }
}

pub const CASES_BASE: f64 = 20.0;
pub const CASES_GAIN: f64 = 1.5;
pub const WEEKLY_AMPLITUDE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub stats: FeatureTable,
    pub trends: FeatureTable,
    pub news: FeatureTable,
    pub groups: BTreeMap<String, Vec<String>>,
}

fn weekly(t: usize) -> f64 {
    (2.0 * PI * t as f64 / 7.0).sin()
}

fn table(dates: &[NaiveDate], source: Source, columns: Vec<(String, Vec<f64>)>) -> FeatureTable {
    FeatureTable {
        dates: dates.to_vec(),
        columns: columns
            .into_iter()
            .map(|(name, values)| Column { name, source, values })
            .collect(),
        held_out: Vec::new(),
    }
}

/// The planted `covid` series: a clipped AR(1) process on 0..100.
pub fn planted_signal(len: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed, 11);
    let mut z = 0.0f64;
    (0..len)
        .map(|_| {
            z = 0.8 * z + 0.6 * r.gen_range(-1.0..1.0);
            (50.0 + 45.0 * z).clamp(0.0, 100.0)
        })
        .collect()
}

pub fn planted_fixture(spec: &FixtureSpec) -> Fixture {
    let n = spec.days;
    let dates: Vec<NaiveDate> = (0..n).map(|i| spec.start + Days::new(i as u64)).collect();
    // Index `t + lag` of `signal` is day t.
    let signal = planted_signal(n + spec.lag, spec.seed);
    let covid = &signal[spec.lag..];
    let cases: Vec<f64> = (0..n)
        .map(|t| CASES_BASE + CASES_GAIN * signal[t] + WEEKLY_AMPLITUDE * weekly(t))
        .collect();

    let mut r = rng::seeded(spec.seed, 12);
    let mut noise = |scale: f64| -> Vec<f64> { (0..n).map(|_| scale * r.gen_range(-1.0..1.0)).collect() };

    let mut total = 0.0;
    let total_cases: Vec<f64> = cases
        .iter()
        .map(|c| {
            total += c;
            total
        })
        .collect();
    let lagged = |k: usize, gain: f64| -> Vec<f64> { (0..n).map(|t| gain * cases[t.saturating_sub(k)]).collect() };
    // No vaccination reports for the first two weeks.
    let vaccinated: Vec<f64> = (0..n)
        .map(|t| if t < 14 { f64::NAN } else { 60.0 * (t - 14) as f64 / n as f64 })
        .collect();
    let tests: Vec<f64> = (0..n).map(|t| 5.0 + 2.0 * weekly(t)).collect();
    let other_a: Vec<f64> = noise(5.0).iter().enumerate().map(|(t, e)| 80.0 + 30.0 * (t as f64 / 50.0).sin() + e).collect();
    let other_b: Vec<f64> = noise(5.0).iter().enumerate().map(|(t, e)| 40.0 + 20.0 * (t as f64 / 33.0).cos() + e).collect();

    let stats_cols: Vec<(&str, &str, Vec<f64>)> = vec![
        ("new_cases_per_million", "cases", cases.clone()),
        ("total_cases_per_million", "cases", total_cases),
        ("people_vaccinated_per_hundred", "vaccinations", vaccinated),
        ("new_tests_per_thousand", "test", tests),
        ("icu_patients_per_million", "covid_patient", lagged(5, 0.05)),
        ("hosp_patients_per_million", "hospital", lagged(4, 0.2)),
        ("population_density", "population", vec![450.0; n]),
        ("usa_new_cases_per_million", "other_countries", other_a),
        ("gbr_new_cases_per_million", "other_countries", other_b),
    ];
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (name, group, _) in &stats_cols {
        groups.entry(group.to_string()).or_default().push(name.to_string());
    }
    let stats = table(
        &dates,
        Source::Stats,
        stats_cols.into_iter().map(|(n, _, v)| (n.to_string(), v)).collect(),
    );

    let trends_cols = TRENDS_KEYWORDS
        .iter()
        .map(|&k| {
            let values = if k == "covid" {
                covid.to_vec()
            } else {
                noise(50.0).iter().map(|v| (v + 50.0).round()).collect()
            };
            (k.to_string(), values)
        })
        .collect();
    let trends = table(&dates, Source::Trends, trends_cols);

    let news_cols = (0..spec.news_dim).map(|j| (format!("e{j}"), noise(0.5))).collect();
    let news = table(&dates, Source::News, news_cols);

    Fixture {
        stats,
        trends,
        news,
        groups,
    }
}

/// CSV in the loader's format; `NaN` becomes an empty cell.
pub fn write_table(path: &Path, table: &FeatureTable) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header = vec!["date".to_string()];
        header.extend(table.columns.iter().map(|c| c.name.clone()));
        w.write_record(&header).expect("writing to memory");
        for (i, d) in table.dates.iter().enumerate() {
            let mut row = vec![d.format(DATE_FORMAT).to_string()];
            row.extend(table.columns.iter().map(|c| {
                let v = c.values[i];
                if v.is_nan() {
                    String::new()
                } else {
                    v.to_string()
                }
            }));
            w.write_record(&row).expect("writing to memory");
        }
        w.flush().expect("writing to memory");
    }
    write_file(path, &out)
}

/// Settings sized for the fixture: a small model that trains in seconds.
pub const FIXTURE_SETTINGS: &[(&str, &str)] = &[
    ("news_hidden", "16,8"),
    ("gru_units", "32"),
    ("num_heads", "2"),
    ("head_size", "8"),
    ("dropout", "0.0"),
    ("batch_size", "32"),
    ("lr", "0.01"),
    ("epochs", "200"),
    ("patience", "200"),
];

/// Write `stats.csv`, `trends.csv`, `news_emb.csv`, `groups.json` and a
/// `mag.conf` pointing at them into `dir`. Returns the config path.
pub fn write_fixture(dir: &Path, fixture: &Fixture, settings: &[(&str, &str)]) -> Result<PathBuf> {
    write_table(&dir.join("stats.csv"), &fixture.stats)?;
    write_table(&dir.join("trends.csv"), &fixture.trends)?;
    write_table(&dir.join("news_emb.csv"), &fixture.news)?;
    let groups = serde_json::to_string_pretty(&fixture.groups).expect("groups serialize");
    write_file(&dir.join("groups.json"), groups.as_bytes())?;
    let mut conf = String::from(
        "# Synthetic fixture\nstats = stats.csv\ntrends = trends.csv\nnews_emb = news_emb.csv\ngroups = groups.json\noutput_dir = out\n",
    );
    for (k, v) in settings {
        conf.push_str(&format!("{k} = {v}\n"));
    }
    let path = dir.join("mag.conf");
    write_file(&path, conf.as_bytes())?;
    Ok(path)
}
