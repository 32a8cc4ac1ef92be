//! Conditioning plans: which layers get style conditioning and when
//! structure conditioning feeds the Up layers.
//!
//! Timesteps descend from `t_start` to `t_end` during generation. Structure
//! injection into the Up layers is active only while `t > up_cutoff_timestep`,
//! where
//!
//! ```text
//! up_cutoff_timestep = t_start - round_half_up(lambda_t * (t_start - t_end))
//! ```
//!
//! so `lambda_t = 0.15` on a 1000 -> 0 schedule keeps structure control on
//! the earliest 150 timesteps (cutoff 850).
//!
//! A plan names layer groups (Up, Mid, Down, convolutions) only through its
//! scale knobs; mapping groups to layer ids is left to the consuming
//! pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::round_half_up;
use crate::ranking::{select_top_k, top_k_size, LayerRanking, RankScope};

pub const PLAN_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Descending,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSpec {
    pub t_start: u32,
    pub t_end: u32,
    pub num_steps: u32,
    pub direction: Direction,
}

impl SchedulerSpec {
    pub fn new(t_start: u32, t_end: u32, num_steps: u32) -> Result<Self> {
        let spec = Self {
            t_start,
            t_end,
            num_steps,
            direction: Direction::Descending,
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<()> {
        if self.t_start <= self.t_end {
            return Err(Error::contract(format!(
                "scheduler needs t_start > t_end, got {} and {}",
                self.t_start, self.t_end
            )));
        }
        if self.num_steps == 0 {
            return Err(Error::contract("scheduler needs at least one step"));
        }
        Ok(())
    }

    pub fn contains(&self, t: u32) -> bool {
        (self.t_end..=self.t_start).contains(&t)
    }

    /// Evenly spaced sampler timesteps from `t_start` down toward `t_end`,
    /// one per step.
    pub fn timesteps(&self) -> Vec<u32> {
        let span = f64::from(self.t_start - self.t_end);
        (0..self.num_steps)
            .map(|i| {
                let frac = f64::from(i) / f64::from(self.num_steps);
                self.t_start - round_half_up(frac * span) as u32
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleSection {
    pub lambda_s: f64,
    /// Conditioned layers, most sensitive first.
    pub layers: Vec<u32>,
    /// Timesteps whose own ranking selects a different subset.
    pub per_timestep_overrides: Option<BTreeMap<u32, Vec<u32>>>,
}

/// Scale knobs passed through to the pipeline, each in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructureKnobs {
    pub lambda_scale: f64,
    pub lambda_mid: f64,
    pub lambda_down: f64,
    pub lambda_convs: f64,
}

impl Default for StructureKnobs {
    fn default() -> Self {
        Self {
            lambda_scale: 1.0,
            lambda_mid: 1.0,
            lambda_down: 1.0,
            lambda_convs: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSection {
    pub lambda_t: f64,
    pub up_cutoff_timestep: u32,
    pub lambda_scale: f64,
    pub lambda_mid: f64,
    pub lambda_down: f64,
    pub lambda_convs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditioningPlan {
    pub schema_version: u32,
    #[serde(rename = "L")]
    pub layers: u32,
    /// Free text describing where the ranking came from and how the
    /// consuming pipeline should map layer ids and groups.
    pub provenance: String,
    pub scheduler: SchedulerSpec,
    pub style: StyleSection,
    pub structure: StructureSection,
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::contract(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// `t_start - round_half_up(lambda_t * (t_start - t_end))`
pub fn up_cutoff(lambda_t: f64, scheduler: &SchedulerSpec) -> Result<u32> {
    check_unit("lambda_t", lambda_t)?;
    let span = f64::from(scheduler.t_start - scheduler.t_end);
    Ok(scheduler.t_start - round_half_up(lambda_t * span) as u32)
}

/// Top-K style layers from a ranking, optionally with per-timestep overrides.
///
/// With `per_timestep`, each ranking in `timestep_rankings` (per-timestep
/// scope) yields its own top-K; only timesteps whose subset differs from the
/// time-averaged one are recorded as overrides.
pub fn build_style_plan(
    ranking: &LayerRanking,
    lambda_s: f64,
    scheduler: &SchedulerSpec,
    per_timestep: bool,
    timestep_rankings: &[LayerRanking],
) -> Result<StyleSection> {
    check_unit("lambda_s", lambda_s)?;
    let layers = ranking.layers();
    let selected = select_top_k(ranking, lambda_s, layers)?;

    let overrides = if per_timestep {
        if timestep_rankings.is_empty() {
            return Err(Error::contract(
                "per-timestep style plan requested without per-timestep rankings",
            ));
        }
        let base: BTreeSet<u32> = selected.iter().copied().collect();
        let mut map = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for r in timestep_rankings {
            let RankScope::PerTimestep(t) = r.scope else {
                return Err(Error::contract("override rankings must have per-timestep scope"));
            };
            if !seen.insert(t) {
                return Err(Error::contract(format!("two rankings for timestep {t}")));
            }
            if r.layers() != layers {
                return Err(Error::contract("override ranking covers a different layer count"));
            }
            if !scheduler.contains(t) {
                return Err(Error::contract(format!("override timestep {t} outside the scheduler range")));
            }
            let subset = select_top_k(r, lambda_s, layers)?;
            if subset.iter().copied().collect::<BTreeSet<_>>() != base {
                map.insert(t, subset);
            }
        }
        Some(map)
    } else {
        None
    };

    Ok(StyleSection {
        lambda_s,
        layers: selected,
        per_timestep_overrides: overrides,
    })
}

pub fn build_structure_plan(
    lambda_t: f64,
    scheduler: &SchedulerSpec,
    knobs: StructureKnobs,
) -> Result<StructureSection> {
    check_unit("lambda_scale", knobs.lambda_scale)?;
    check_unit("lambda_mid", knobs.lambda_mid)?;
    check_unit("lambda_down", knobs.lambda_down)?;
    check_unit("lambda_convs", knobs.lambda_convs)?;
    Ok(StructureSection {
        lambda_t,
        up_cutoff_timestep: up_cutoff(lambda_t, scheduler)?,
        lambda_scale: knobs.lambda_scale,
        lambda_mid: knobs.lambda_mid,
        lambda_down: knobs.lambda_down,
        lambda_convs: knobs.lambda_convs,
    })
}

/// Conditioning decisions for one (layer, timestep).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerMask {
    pub style_on: bool,
    pub structure_up_on: bool,
    pub mid_scale: f64,
    pub down_scale: f64,
    pub conv_scale: f64,
    pub global_scale: f64,
}

impl ConditioningPlan {
    pub fn new(
        layers: u32,
        provenance: impl Into<String>,
        scheduler: SchedulerSpec,
        style: StyleSection,
        structure: StructureSection,
    ) -> Result<Self> {
        let plan = Self {
            schema_version: PLAN_SCHEMA_VERSION,
            layers,
            provenance: provenance.into(),
            scheduler,
            style,
            structure,
        };
        plan.check()?;
        Ok(plan)
    }

    /// Verifies every cross-field invariant of the plan.
    pub fn check(&self) -> Result<()> {
        if self.schema_version != PLAN_SCHEMA_VERSION {
            return Err(Error::contract(format!(
                "unsupported plan schema_version {}",
                self.schema_version
            )));
        }
        if self.layers == 0 {
            return Err(Error::contract("plan needs L >= 1"));
        }
        self.scheduler.check()?;

        let k = top_k_size(self.style.lambda_s, self.layers as usize)?;
        let check_subset = |what: &str, subset: &[u32]| -> Result<()> {
            let unique: BTreeSet<u32> = subset.iter().copied().collect();
            if subset.len() != k || unique.len() != k || subset.iter().any(|&l| l >= self.layers) {
                return Err(Error::contract(format!(
                    "{what} must hold {k} distinct layers below {}",
                    self.layers
                )));
            }
            Ok(())
        };
        check_subset("style.layers", &self.style.layers)?;
        if let Some(overrides) = &self.style.per_timestep_overrides {
            for (&t, subset) in overrides {
                if !self.scheduler.contains(t) {
                    return Err(Error::contract(format!("override timestep {t} outside the scheduler range")));
                }
                check_subset(&format!("override at t = {t}"), subset)?;
            }
        }

        let s = &self.structure;
        for (name, v) in [
            ("lambda_scale", s.lambda_scale),
            ("lambda_mid", s.lambda_mid),
            ("lambda_down", s.lambda_down),
            ("lambda_convs", s.lambda_convs),
        ] {
            check_unit(name, v)?;
        }
        let expected = up_cutoff(s.lambda_t, &self.scheduler)?;
        if s.up_cutoff_timestep != expected {
            return Err(Error::contract(format!(
                "up_cutoff_timestep {} does not match lambda_t (expected {expected})",
                s.up_cutoff_timestep
            )));
        }
        Ok(())
    }

    /// Layers receiving style conditioning at timestep `t`.
    pub fn style_layers_at(&self, t: u32) -> &[u32] {
        self.style
            .per_timestep_overrides
            .as_ref()
            .and_then(|o| o.get(&t))
            .unwrap_or(&self.style.layers)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check()?;
        let mut text = serde_json::to_string_pretty(self).expect("plan serializes");
        text.push('\n');
        Ok(text.into_bytes())
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let plan: Self = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        plan.check()?;
        Ok(plan)
    }
}

pub fn mask_for(plan: &ConditioningPlan, layer: u32, timestep: u32) -> Result<LayerMask> {
    if layer >= plan.layers {
        return Err(Error::lookup(format!("layer {layer} outside [0, {})", plan.layers)));
    }
    if !plan.scheduler.contains(timestep) {
        return Err(Error::lookup(format!(
            "timestep {timestep} outside [{}, {}]",
            plan.scheduler.t_end, plan.scheduler.t_start
        )));
    }
    let s = &plan.structure;
    Ok(LayerMask {
        style_on: plan.style_layers_at(timestep).contains(&layer),
        structure_up_on: timestep > s.up_cutoff_timestep,
        mid_scale: s.lambda_mid,
        down_scale: s.lambda_down,
        conv_scale: s.lambda_convs,
        global_scale: s.lambda_scale,
    })
}

pub fn emit_plan(plan: &ConditioningPlan, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = plan.to_bytes()?;
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_plan(path: impl AsRef<Path>) -> Result<ConditioningPlan> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .map(BufReader::new)
        .and_then(|mut r| r.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    ConditioningPlan::from_slice(&bytes)
}
