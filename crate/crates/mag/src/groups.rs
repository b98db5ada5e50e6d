//! Named groups of statistics columns and leave-one-out column removal.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use crate::error::{AppError, Result};
use crate::table::{FeatureTable, Source};

pub const GROUP_NAMES: [&str; 7] = [
    "cases",
    "vaccinations",
    "test",
    "covid_patient",
    "hospital",
    "population",
    "other_countries",
];

/// Every statistics column assigned to exactly one of [`GROUP_NAMES`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGroupMap {
    /// In [`GROUP_NAMES`] order.
    groups: Vec<(String, Vec<String>)>,
}

impl FeatureGroupMap {
    pub fn new(map: BTreeMap<String, Vec<String>>) -> Result<Self> {
        for name in map.keys() {
            if !GROUP_NAMES.contains(&name.as_str()) {
                return Err(AppError::Config(format!(
                    "unknown feature group `{name}` (expected {})",
                    GROUP_NAMES.join(", ")
                )));
            }
        }
        let mut owner: HashMap<&str, &str> = HashMap::new();
        let mut groups = Vec::with_capacity(GROUP_NAMES.len());
        for g in GROUP_NAMES {
            let cols = map
                .get(g)
                .ok_or_else(|| AppError::Config(format!("feature group `{g}` is missing")))?;
            for c in cols {
                if let Some(prev) = owner.insert(c, g) {
                    return Err(AppError::Config(format!("column `{c}` is in both `{prev}` and `{g}`")));
                }
            }
            groups.push((g.to_string(), cols.clone()));
        }
        Ok(FeatureGroupMap { groups })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let map: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)
            .map_err(|e| AppError::format(path, Some(e.line() as u64), e.to_string()))?;
        Self::new(map)
    }

    pub fn columns(&self, group: &str) -> Option<&[String]> {
        self.groups.iter().find(|(g, _)| g == group).map(|(_, c)| c.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.groups.iter().map(|(g, c)| (g.as_str(), c.as_slice()))
    }

    /// Groups must cover exactly the statistics columns of `table`.
    pub fn check_covers(&self, table: &FeatureTable) -> Result<()> {
        let stats: Vec<&str> = table
            .columns
            .iter()
            .chain(&table.held_out)
            .filter(|c| c.source == Source::Stats)
            .map(|c| c.name.as_str())
            .collect();
        for (g, cols) in self.iter() {
            if let Some(c) = cols.iter().find(|c| !stats.contains(&c.as_str())) {
                return Err(AppError::Config(format!("group `{g}` lists unknown column `{c}`")));
            }
        }
        if let Some(c) = stats.iter().find(|c| self.iter().all(|(_, cols)| !cols.iter().any(|x| x == *c))) {
            return Err(AppError::Config(format!("statistics column `{c}` belongs to no group")));
        }
        Ok(())
    }
}

/// What to drop from the inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Leave {
    Nothing,
    Group(String),
    Trends,
    News,
}

impl Leave {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" | "nothing" => Ok(Leave::Nothing),
            "trends" => Ok(Leave::Trends),
            "news" => Ok(Leave::News),
            g if GROUP_NAMES.contains(&g) => Ok(Leave::Group(g.to_string())),
            other => Err(AppError::Config(format!("unknown feature group `{other}`"))),
        }
    }
}

impl fmt::Display for Leave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Leave::Nothing => f.write_str("none"),
            Leave::Group(g) => f.write_str(g),
            Leave::Trends => f.write_str("trends"),
            Leave::News => f.write_str("news"),
        }
    }
}

/// Move the columns selected by `leave` from the inputs to the held-out set.
pub fn leave_one_out(table: &FeatureTable, groups: &FeatureGroupMap, leave: &Leave) -> Result<FeatureTable> {
    let drop: Box<dyn Fn(&crate::table::Column) -> bool> = match leave {
        Leave::Nothing => return Ok(table.clone()),
        Leave::Trends => Box::new(|c| c.source == Source::Trends),
        Leave::News => Box::new(|c| c.source == Source::News),
        Leave::Group(g) => {
            let cols = groups
                .columns(g)
                .ok_or_else(|| AppError::Config(format!("unknown feature group `{g}`")))?
                .to_vec();
            Box::new(move |c| c.source == Source::Stats && cols.contains(&c.name))
        }
    };
    let mut out = table.clone();
    let (removed, kept): (Vec<_>, Vec<_>) = out.columns.into_iter().partition(|c| drop(c));
    out.columns = kept;
    out.held_out.extend(removed);
    Ok(out)
}
