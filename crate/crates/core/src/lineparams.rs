//! Conductor catalogs, line impedances and ratings, transformer parameters.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::geodata::{LinePath, METERS_PER_MILE};
use crate::model::{Branch, BranchKind, GridModel, LineState, BASE_MVA};

const OMEGA: f64 = 2.0 * PI * 60.0;
const EPSILON_0: f64 = 8.854_187_812_8e-12;
/// Inductive reactance factor in Ω/mi per unit of ln(GMD/GMR) at 60 Hz.
pub const X_FACTOR: f64 = 0.12134;
/// Ratio of GMR to physical radius for a stranded conductor.
const GMR_TO_RADIUS: f64 = 0.7788;

/// One conductor type available at a voltage level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductorSpec {
    pub kv: f64,
    pub name: String,
    pub kcmil: f64,
    pub ampacity_a: f64,
    pub r_per_mile: f64,
    pub gmr_ft: f64,
}

/// A conductor in a given number of parallel circuits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductorOption {
    pub name: String,
    pub size_kcmil: f64,
    pub ampacity_a: f64,
    pub r_per_mile: f64,
    pub gmr_ft: f64,
    pub circuits: u32,
}

impl ConductorOption {
    pub fn new(spec: &ConductorSpec, circuits: u32) -> Self {
        Self {
            name: spec.name.clone(),
            size_kcmil: spec.kcmil,
            ampacity_a: spec.ampacity_a,
            r_per_mile: spec.r_per_mile,
            gmr_ft: spec.gmr_ft,
            circuits,
        }
    }
}

/// Conductor types per voltage, each list in ascending ampacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductorCatalog {
    pub levels: Vec<(f64, Vec<ConductorSpec>)>,
}

impl ConductorCatalog {
    pub fn from_specs(specs: Vec<ConductorSpec>) -> Result<Self> {
        let mut levels: Vec<(f64, Vec<ConductorSpec>)> = Vec::new();
        for s in specs {
            if !(s.ampacity_a > 0.0 && s.r_per_mile >= 0.0 && s.gmr_ft > 0.0 && s.kv > 0.0) {
                return Err(GridError::Validation(format!("conductor {} at {} kV has invalid data", s.name, s.kv)));
            }
            match levels.iter_mut().find(|(kv, _)| *kv == s.kv) {
                Some((_, v)) => v.push(s),
                None => levels.push((s.kv, vec![s])),
            }
        }
        for (_, v) in levels.iter_mut() {
            v.sort_by(|a, b| a.ampacity_a.total_cmp(&b.ampacity_a).then(a.kcmil.total_cmp(&b.kcmil)));
        }
        levels.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { levels })
    }

    /// Conductors for `kv`, falling back to the nearest catalogued voltage.
    pub fn for_voltage(&self, kv: f64) -> Result<&[ConductorSpec]> {
        let (level, specs) = self
            .levels
            .iter()
            .min_by(|a, b| (a.0 - kv).abs().total_cmp(&(b.0 - kv).abs()))
            .ok_or_else(|| GridError::Validation("conductor catalog is empty".into()))?;
        if *level != kv {
            log::warn!("no conductors catalogued at {kv} kV; using the {level} kV set");
        }
        if specs.is_empty() {
            return Err(GridError::Validation(format!("conductor catalog has no entries at {level} kV")));
        }
        Ok(specs)
    }
}

/// Common ACSR sizes: name, kcmil, ampacity (A), resistance (Ω/mi), GMR (ft).
const ACSR: [(&str, f64, f64, f64, f64); 11] = [
    ("Raven", 105.6, 242.0, 0.8843, 0.00446),
    ("Penguin", 211.6, 357.0, 0.4450, 0.00814),
    ("Partridge", 266.8, 475.0, 0.3500, 0.0217),
    ("Linnet", 336.4, 530.0, 0.2780, 0.0243),
    ("Hawk", 477.0, 659.0, 0.1960, 0.0289),
    ("Dove", 556.5, 726.0, 0.1680, 0.0314),
    ("Drake", 795.0, 907.0, 0.1170, 0.0375),
    ("Cardinal", 954.0, 996.0, 0.0982, 0.0402),
    ("Bittern", 1272.0, 1200.0, 0.0740, 0.0451),
    ("Falcon", 1590.0, 1380.0, 0.0591, 0.0520),
    ("Bluebird", 2156.0, 1620.0, 0.0436, 0.0588),
];

/// Eight consecutive ACSR sizes per standard voltage, larger sizes at higher voltage.
pub fn default_catalog() -> ConductorCatalog {
    let windows = [(66.0, 0usize), (115.0, 1), (230.0, 2), (500.0, 3)];
    let specs = windows
        .iter()
        .flat_map(|&(kv, first)| {
            ACSR[first..first + 8].iter().map(move |&(name, kcmil, amp, r, gmr)| ConductorSpec {
                kv,
                name: name.to_string(),
                kcmil,
                ampacity_a: amp,
                r_per_mile: r,
                gmr_ft: gmr,
            })
        })
        .collect();
    ConductorCatalog::from_specs(specs).expect("default catalog is valid")
}

/// CSV `kv,name,kcmil,ampacity_a,r_per_mile,gmr_ft`.
pub fn parse_catalog(text: &str, file: &str) -> Result<ConductorCatalog> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut specs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| GridError::schema(file, format!("line {}", e.position().map_or(0, |p| p.line())), "record", e))?;
        let label = format!("line {}", rec.position().map_or(0, |p| p.line()));
        let num = |i: usize, f: &str| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| GridError::schema(file, &label, f, "expected a number"))
        };
        specs.push(ConductorSpec {
            kv: num(0, "kv")?,
            name: rec.get(1).unwrap_or("").to_string(),
            kcmil: num(2, "kcmil")?,
            ampacity_a: num(3, "ampacity_a")?,
            r_per_mile: num(4, "r_per_mile")?,
            gmr_ft: num(5, "gmr_ft")?,
        });
    }
    ConductorCatalog::from_specs(specs)
}

pub fn catalog_to_csv(cat: &ConductorCatalog) -> String {
    let mut out = String::from("kv,name,kcmil,ampacity_a,r_per_mile,gmr_ft\n");
    for (_, specs) in &cat.levels {
        for s in specs {
            out += &format!("{},{},{},{},{},{}\n", s.kv, s.name, s.kcmil, s.ampacity_a, s.r_per_mile, s.gmr_ft);
        }
    }
    out
}

/// A value keyed by voltage level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KvValue {
    pub kv: f64,
    pub value: f64,
}

/// Accepted MVA range for lines at a voltage level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvaBand {
    pub kv: f64,
    pub min_mva: f64,
    pub max_mva: f64,
}

fn nearest_by_kv<T: Copy>(items: &[T], kv: f64, key: impl Fn(&T) -> f64) -> Option<T> {
    items.iter().copied().min_by(|a, b| (key(a) - kv).abs().total_cmp(&(key(b) - kv).abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineParamsConfig {
    pub gmd_ft: Vec<KvValue>,
    pub mva_bands: Vec<MvaBand>,
    pub max_circuits: u32,
    pub transformer_initial_mva: f64,
    pub transformer_ladder_mva: Vec<f64>,
}

impl Default for LineParamsConfig {
    fn default() -> Self {
        Self {
            gmd_ft: vec![
                KvValue { kv: 66.0, value: 5.0 },
                KvValue { kv: 115.0, value: 10.0 },
                KvValue { kv: 230.0, value: 25.0 },
                KvValue { kv: 500.0, value: 45.0 },
            ],
            mva_bands: vec![
                MvaBand { kv: 66.0, min_mva: 20.0, max_mva: 150.0 },
                MvaBand { kv: 115.0, min_mva: 50.0, max_mva: 300.0 },
                MvaBand { kv: 230.0, min_mva: 150.0, max_mva: 800.0 },
                MvaBand { kv: 500.0, min_mva: 400.0, max_mva: 2500.0 },
            ],
            max_circuits: 8,
            transformer_initial_mva: 2000.0,
            transformer_ladder_mva: (1..=20).map(|k| 100.0 * k as f64).collect(),
        }
    }
}

impl LineParamsConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gmd_ft.iter().all(|g| g.value > 0.0)
            && !self.gmd_ft.is_empty()
            && self.mva_bands.iter().all(|b| b.min_mva <= b.max_mva)
            && (1..=8).contains(&self.max_circuits)
            && self.transformer_initial_mva > 0.0
            && !self.transformer_ladder_mva.is_empty()
            && self.transformer_ladder_mva.windows(2).all(|w| w[0] < w[1])
            && self.transformer_ladder_mva[0] > 0.0;
        if ok {
            Ok(())
        } else {
            Err(GridError::Validation("invalid line parameter settings".into()))
        }
    }

    pub fn gmd_for(&self, kv: f64) -> Result<f64> {
        nearest_by_kv(&self.gmd_ft, kv, |g| g.kv)
            .map(|g| g.value)
            .ok_or_else(|| GridError::Validation("GMD table is empty".into()))
    }

    pub fn band_for(&self, kv: f64) -> Option<MvaBand> {
        nearest_by_kv(&self.mva_bands, kv, |b| b.kv)
    }
}

/// Series and shunt parameters in per unit on the 100 MVA base.
pub fn impedance_from_conductor(option: &ConductorOption, kv: f64, length_miles: f64, gmd_ft: f64) -> Result<(f64, f64, f64)> {
    if !(option.gmr_ft > 0.0) || !(gmd_ft > option.gmr_ft / GMR_TO_RADIUS) {
        return Err(GridError::Validation(format!(
            "GMD {gmd_ft} ft and GMR {} ft give no positive reactance",
            option.gmr_ft
        )));
    }
    if !(length_miles > 0.0) || !(kv > 0.0) || option.circuits == 0 {
        return Err(GridError::Validation(format!("invalid line geometry ({kv} kV, {length_miles} mi)")));
    }
    let c = option.circuits as f64;
    let x_mi = X_FACTOR * (gmd_ft / option.gmr_ft).ln() / c;
    let r_mi = option.r_per_mile / c;
    let radius = option.gmr_ft / GMR_TO_RADIUS;
    let b_mi = OMEGA * 2.0 * PI * EPSILON_0 / (gmd_ft / radius).ln() * METERS_PER_MILE * c;
    let z_base = kv * kv / BASE_MVA;
    Ok((r_mi * length_miles / z_base, x_mi * length_miles / z_base, b_mi * length_miles * z_base))
}

/// Three-phase thermal rating in MVA.
pub fn mva_rating(option: &ConductorOption, kv: f64) -> f64 {
    3f64.sqrt() * kv * option.ampacity_a / 1000.0 * option.circuits as f64
}

/// All conductor and circuit combinations for a voltage, ascending in MVA,
/// with entries within 1% of the previous kept entry dropped.
pub fn build_option_table(catalog: &ConductorCatalog, kv: f64, max_circuits: u32) -> Result<Vec<ConductorOption>> {
    let specs = catalog.for_voltage(kv)?;
    let mut all: Vec<ConductorOption> = specs
        .iter()
        .flat_map(|s| (1..=max_circuits).map(move |c| ConductorOption::new(s, c)))
        .collect();
    all.sort_by(|a, b| mva_rating(a, kv).total_cmp(&mva_rating(b, kv)).then(a.circuits.cmp(&b.circuits)));
    let mut table: Vec<ConductorOption> = Vec::new();
    for o in all {
        let keep = table.last().is_none_or(|last| mva_rating(&o, kv) > mva_rating(last, kv) * 1.01);
        if keep {
            table.push(o);
        }
    }
    Ok(table)
}

/// Position of the table entry closest in MVA to the given state.
pub fn option_index(table: &[ConductorOption], option: &ConductorOption, kv: f64) -> usize {
    let target = mva_rating(option, kv);
    (0..table.len())
        .min_by(|&a, &b| (mva_rating(&table[a], kv) - target).abs().total_cmp(&(mva_rating(&table[b], kv) - target).abs()))
        .unwrap_or(0)
}

/// Next configuration up: larger conductor, else one more circuit of the
/// largest conductor. `None` when saturated.
pub fn upgrade_state(s: LineState, n_conductors: usize, max_circuits: u32) -> Option<LineState> {
    if s.conductor + 1 < n_conductors {
        Some(LineState { conductor: s.conductor + 1, ..s })
    } else if s.circuits < max_circuits {
        Some(LineState { conductor: n_conductors - 1, circuits: s.circuits + 1 })
    } else {
        None
    }
}

/// Next configuration down: smaller conductor, else one circuit fewer of the
/// smallest conductor. `None` at one circuit of the smallest conductor.
pub fn downsize_state(s: LineState) -> Option<LineState> {
    if s.conductor > 0 {
        Some(LineState { conductor: s.conductor - 1, ..s })
    } else if s.circuits > 1 {
        Some(LineState { conductor: 0, circuits: s.circuits - 1 })
    } else {
        None
    }
}

/// Installs the parameters implied by `state` on a line branch.
pub fn apply_line_state(br: &mut Branch, state: LineState, catalog: &ConductorCatalog, cfg: &LineParamsConfig) -> Result<()> {
    let path = br.path().ok_or_else(|| GridError::Validation(format!("branch {} is not a line", br.id)))?;
    let kv = path.voltage_kv;
    let specs = catalog.for_voltage(kv)?;
    let spec = specs
        .get(state.conductor)
        .ok_or_else(|| GridError::Validation(format!("line {} has conductor index {}", br.id, state.conductor)))?;
    let option = ConductorOption::new(spec, state.circuits);
    let (r, x, b) = impedance_from_conductor(&option, kv, path.length_miles(), cfg.gmd_for(kv)?)?;
    br.r_pu = r;
    br.x_pu = x;
    br.b_pu = b;
    br.rate_mva = mva_rating(&option, kv);
    if br.doubled {
        br.original_rate_mva = Some(br.rate_mva);
        br.rate_mva *= 2.0;
    }
    br.state = Some(state);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Form1Record {
    pub utility: String,
    pub voltage_kv: f64,
    pub length_miles: f64,
    pub conductors_per_phase: u32,
    pub size_kcmil: f64,
    pub material: String,
}

/// CSV `utility,kv,length_mi,conductors_per_phase,kcmil,material`.
pub fn parse_form1(text: &str, file: &str) -> Result<Vec<Form1Record>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| GridError::schema(file, format!("line {}", e.position().map_or(0, |p| p.line())), "record", e))?;
        let label = format!("line {}", rec.position().map_or(0, |p| p.line()));
        let num = |i: usize, f: &str| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| GridError::schema(file, &label, f, "expected a number"))
        };
        let length = num(2, "length_mi")?;
        if !(length > 0.0) {
            return Err(GridError::schema(file, &label, "length_mi", "must be positive"));
        }
        out.push(Form1Record {
            utility: rec.get(0).unwrap_or("").to_string(),
            voltage_kv: num(1, "kv")?,
            length_miles: length,
            conductors_per_phase: num(3, "conductors_per_phase")? as u32,
            size_kcmil: num(4, "kcmil")?,
            material: rec.get(5).unwrap_or("").to_string(),
        });
    }
    Ok(out)
}

pub fn form1_to_csv(records: &[Form1Record]) -> String {
    let mut out = String::from("utility,kv,length_mi,conductors_per_phase,kcmil,material\n");
    for r in records {
        out += &format!(
            "{},{},{},{},{},{}\n",
            r.utility, r.voltage_kv, r.length_miles, r.conductors_per_phase, r.size_kcmil, r.material
        );
    }
    out
}

/// Closest-length record at the line's voltage, restricted to the line's
/// utility when that utility appears among the candidates.
pub fn match_form1<'a>(line: &LinePath, form1: &'a [Form1Record]) -> Option<&'a Form1Record> {
    let kvs: Vec<f64> = form1.iter().map(|r| r.voltage_kv).collect();
    let kv = nearest_by_kv(&kvs, line.voltage_kv, |v| *v)?;
    if kv != line.voltage_kv {
        log::warn!("no Form 1 records at {} kV for line {}; using {kv} kV", line.voltage_kv, line.id);
    }
    let at_kv: Vec<&Form1Record> = form1.iter().filter(|r| r.voltage_kv == kv).collect();
    let same_utility: Vec<&Form1Record> = match &line.owner {
        Some(o) => at_kv.iter().copied().filter(|r| &r.utility == o).collect(),
        None => Vec::new(),
    };
    let pool = if same_utility.is_empty() { at_kv } else { same_utility };
    let len = line.length_miles();
    pool.into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| {
            (a.length_miles - len).abs().total_cmp(&(b.length_miles - len).abs()).then(i.cmp(j))
        })
        .map(|(_, r)| r)
}

/// Starting configuration: the catalog conductor nearest the record's size,
/// one circuit. Without a record, the middle conductor of the voltage.
pub fn initial_state(record: Option<&Form1Record>, specs: &[ConductorSpec]) -> LineState {
    let conductor = match record {
        Some(r) => (0..specs.len())
            .min_by(|&a, &b| (specs[a].kcmil - r.size_kcmil).abs().total_cmp(&(specs[b].kcmil - r.size_kcmil).abs()))
            .unwrap_or(0),
        None => specs.len() / 2,
    };
    LineState { conductor, circuits: 1 }
}

/// Assigns every line its initial conductor and parameters, then checks the
/// resulting ratings against the configured bands.
pub fn init_lines(model: &mut GridModel, catalog: &ConductorCatalog, form1: &[Form1Record], cfg: &LineParamsConfig) -> Result<()> {
    cfg.validate()?;
    for br in model.branches.iter_mut() {
        let Some(path) = br.path() else { continue };
        let specs = catalog.for_voltage(path.voltage_kv)?;
        let state = initial_state(match_form1(path, form1), specs);
        apply_line_state(br, state, catalog, cfg)?;
        if let Some(band) = cfg.band_for(br.voltage_kv()) {
            if br.rate_mva < band.min_mva || br.rate_mva > band.max_mva {
                return Err(GridError::Validation(format!(
                    "line {} initial rating {:.1} MVA outside [{}, {}] for {} kV",
                    br.id, br.rate_mva, band.min_mva, band.max_mva, band.kv
                )));
            }
        }
    }
    Ok(())
}

/// Transformer impedance and X/R tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerTables {
    /// `(kv_hi, kv_lo, mva, x_pu on own base)`.
    pub impedance: Vec<(f64, f64, f64, f64)>,
    /// `(mva, x/r)`.
    pub xr: Vec<(f64, f64)>,
}

impl TransformerTables {
    /// Generic values for the standard voltage pairs over the size ladder.
    pub fn default_for(ladder: &[f64]) -> Self {
        let kvs = [500.0f64, 230.0, 115.0, 66.0];
        let mut impedance = Vec::new();
        for (i, &hi) in kvs.iter().enumerate() {
            for &lo in &kvs[i + 1..] {
                for &mva in ladder {
                    let x = 0.08 + 0.02 * (hi / lo).ln() + 0.03 * mva / 2000.0;
                    impedance.push((hi, lo, mva, x));
                }
            }
        }
        let xr = ladder.iter().map(|&m| (m, 15.0 + 35.0 * m / 2000.0)).collect();
        Self { impedance, xr }
    }

    /// Per-unit `(r, x)` on the system base for a transformer of the given size.
    pub fn lookup(&self, kv_hi: f64, kv_lo: f64, mva: f64) -> Result<(f64, f64)> {
        let pair_dist = |h: f64, l: f64| (h / kv_hi).ln().abs() + (l / kv_lo).ln().abs();
        let &(ph, pl, _, _) = self
            .impedance
            .iter()
            .min_by(|a, b| pair_dist(a.0, a.1).total_cmp(&pair_dist(b.0, b.1)))
            .ok_or_else(|| GridError::Validation("transformer impedance table is empty".into()))?;
        if ph != kv_hi || pl != kv_lo {
            log::warn!("no transformer data for {kv_hi}/{kv_lo} kV; using {ph}/{pl} kV");
        }
        let &(_, _, _, x_own) = self
            .impedance
            .iter()
            .filter(|e| e.0 == ph && e.1 == pl)
            .min_by(|a, b| (a.2 - mva).abs().total_cmp(&(b.2 - mva).abs()))
            .expect("pair present");
        let &(_, xr) = self
            .xr
            .iter()
            .min_by(|a, b| (a.0 - mva).abs().total_cmp(&(b.0 - mva).abs()))
            .ok_or_else(|| GridError::Validation("transformer X/R table is empty".into()))?;
        let x = x_own * BASE_MVA / mva;
        Ok((x / xr, x))
    }
}

/// CSV `kv_hi,kv_lo,mva,x_pu` and `mva,xr`.
pub fn parse_transformer_tables(impedance_csv: &str, xr_csv: &str) -> Result<TransformerTables> {
    let rows = |text: &str, file: &str, width: usize| -> Result<Vec<Vec<f64>>> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        rdr.records()
            .map(|rec| {
                let rec = rec.map_err(|e| GridError::schema(file, "record", "record", e))?;
                let label = format!("line {}", rec.position().map_or(0, |p| p.line()));
                (0..width)
                    .map(|i| {
                        rec.get(i)
                            .and_then(|s| s.parse::<f64>().ok())
                            .filter(|v| v.is_finite() && *v > 0.0)
                            .ok_or_else(|| GridError::schema(file, &label, &format!("column {i}"), "expected a positive number"))
                    })
                    .collect()
            })
            .collect()
    };
    Ok(TransformerTables {
        impedance: rows(impedance_csv, "transformer impedance", 4)?.into_iter().map(|r| (r[0], r[1], r[2], r[3])).collect(),
        xr: rows(xr_csv, "transformer x/r", 2)?.into_iter().map(|r| (r[0], r[1])).collect(),
    })
}

fn set_transformer(br: &mut Branch, mva: f64, tables: &TransformerTables) -> Result<()> {
    let BranchKind::Transformer { kv_hi, kv_lo } = br.kind else {
        return Err(GridError::Validation(format!("branch {} is not a transformer", br.id)));
    };
    let (r, x) = tables.lookup(kv_hi, kv_lo, mva)?;
    br.r_pu = r;
    br.x_pu = x;
    br.b_pu = 0.0;
    br.rate_mva = mva;
    Ok(())
}

/// Every transformer at the initial rating.
pub fn init_transformers(model: &mut GridModel, tables: &TransformerTables, cfg: &LineParamsConfig) -> Result<()> {
    for br in model.branches.iter_mut().filter(|b| !b.is_line()) {
        set_transformer(br, cfg.transformer_initial_mva, tables)?;
    }
    Ok(())
}

/// Smallest ladder size covering `flow_mw`, capped at the top size.
pub fn ladder_size(flow_mw: f64, ladder: &[f64]) -> f64 {
    match ladder.iter().find(|&&m| m >= flow_mw) {
        Some(&m) => m,
        None => {
            let top = *ladder.last().expect("non-empty ladder");
            log::warn!("transformer flow {flow_mw:.1} MW exceeds the largest size {top} MVA");
            top
        }
    }
}

/// Resizes each transformer to cover its maximum observed flow.
/// `max_flow_mw` is indexed by branch.
pub fn resize_transformers(model: &mut GridModel, max_flow_mw: &[f64], tables: &TransformerTables, cfg: &LineParamsConfig) -> Result<()> {
    for (br, &flow) in model.branches.iter_mut().zip(max_flow_mw) {
        if !br.is_line() {
            set_transformer(br, ladder_size(flow, &cfg.transformer_ladder_mva), tables)?;
        }
    }
    Ok(())
}
