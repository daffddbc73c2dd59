//! MATPOWER case text with a GeoJSON path sidecar.
//!
//! The standard `bus`, `gen`, `branch` and `gencost` tables are followed by
//! extension tables (`bus_geo`, `branch_ext`, `gen_ext`, `load`, string cells)
//! that carry everything else, so a written case re-imports to the same model.
//! Condensers appear in `gen` with fuel `sync_cond`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::assignment::{CostCurve, CostKind};
use crate::error::{GridError, Result};
use crate::geodata::{FuelType, GeoPoint, LinePath};
use crate::model::{Branch, BranchKind, Bus, BusKind, Condenser, Generator, GridModel, LineState, Load};

const CONDENSER_FUEL: &str = "sync_cond";
pub const VMAX_PU: f64 = 1.05;
pub const VMIN_PU: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct CaseExport {
    pub matpower: String,
    pub geojson: String,
}

fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn opt_str(s: &Option<String>) -> String {
    quote(s.as_deref().unwrap_or(""))
}

fn matrix(out: &mut String, name: &str, header: &str, rows: &[Vec<f64>]) {
    let _ = writeln!(out, "\n%% {header}\nmpc.{name} = [");
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "\t{};", cells.join("\t"));
    }
    out.push_str("];\n");
}

fn cell(out: &mut String, name: &str, values: &[String]) {
    let _ = writeln!(out, "\nmpc.{name} = {{");
    for v in values {
        let _ = writeln!(out, "\t{v};");
    }
    out.push_str("};\n");
}

fn cost_code(k: CostKind) -> f64 {
    match k {
        CostKind::Zero => 0.0,
        CostKind::Linear => 1.0,
        CostKind::Quadratic => 2.0,
    }
}

fn cost_kind(c: f64) -> Option<CostKind> {
    match c as i64 {
        0 => Some(CostKind::Zero),
        1 => Some(CostKind::Linear),
        2 => Some(CostKind::Quadratic),
        _ => None,
    }
}

fn function_name(name: &str) -> String {
    let mut s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
    if !s.starts_with(|c: char| c.is_ascii_alphabetic()) {
        s.insert_str(0, "case_");
    }
    s
}

/// Bus with the largest generating capacity, or the first bus.
fn reference_bus(model: &GridModel) -> usize {
    let mut cap = vec![0.0; model.n_buses()];
    for g in &model.generators {
        cap[g.bus] += g.pmax_mw;
    }
    (0..cap.len()).fold(0, |best, k| if cap[k] > cap[best] { k } else { best })
}

/// Writes a finalized model. Lines without impedance or rating are rejected.
pub fn export_case(model: &GridModel) -> Result<CaseExport> {
    model.validate(true)?;
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = {}", function_name(&model.name));
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {};", model.base_mva);
    let _ = writeln!(out, "mpc.name = {};", quote(&model.name));
    let _ = writeln!(out, "mpc.load_q_ratio = {};", model.load_q_ratio);

    let pd = model.bus_peak_demand();
    let slack = reference_bus(model);
    let mut has_gen = vec![false; model.n_buses()];
    for g in &model.generators {
        has_gen[g.bus] = true;
    }
    let id = |k: usize| model.buses[k].id as f64;
    let bus_rows: Vec<Vec<f64>> = model
        .buses
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let ty = if k == slack { 3.0 } else if has_gen[k] { 2.0 } else { 1.0 };
            vec![b.id as f64, ty, pd[k], pd[k] * model.load_q_ratio, 0.0, 0.0, 1.0, 1.0, 0.0, b.voltage_kv, 1.0, VMAX_PU, VMIN_PU]
        })
        .collect();
    matrix(&mut out, "bus", "bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin", &bus_rows);

    let mut gen_rows = Vec::new();
    let mut cost_rows = Vec::new();
    let mut fuels = Vec::new();
    let mut gen_ids = Vec::new();
    let mut plant = Vec::new();
    let mut unit = Vec::new();
    let mut gen_ext = Vec::new();
    for g in &model.generators {
        gen_rows.push(vec![id(g.bus), 0.0, 0.0, g.qmax_mvar, g.qmin_mvar, 1.0, model.base_mva, 1.0, g.pmax_mw, g.pmin_mw]);
        cost_rows.push(vec![2.0, 0.0, 0.0, 3.0, g.cost.c2, g.cost.c1, g.cost.c0]);
        fuels.push(quote(g.fuel.as_str()));
        gen_ids.push(quote(&g.id));
        plant.push(opt_str(&g.plant_code));
        unit.push(opt_str(&g.unit_id));
        gen_ext.push(vec![g.location.lat, g.location.lon, g.power_factor, cost_code(g.cost.kind)]);
    }
    for c in &model.condensers {
        let b = &model.buses[c.bus];
        gen_rows.push(vec![b.id as f64, 0.0, 0.0, c.qmax_mvar, c.qmin_mvar(), 1.0, model.base_mva, if c.active { 1.0 } else { 0.0 }, 0.0, 0.0]);
        cost_rows.push(vec![2.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0]);
        fuels.push(quote(CONDENSER_FUEL));
        gen_ids.push(quote(&format!("SC{}", b.id)));
        plant.push(quote(""));
        unit.push(quote(""));
        gen_ext.push(vec![b.location.lat, b.location.lon, 0.0, 0.0]);
    }
    matrix(&mut out, "gen", "bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin", &gen_rows);

    let branch_rows: Vec<Vec<f64>> = model
        .branches
        .iter()
        .map(|br| {
            let ratio = if br.is_line() { 0.0 } else { 1.0 };
            vec![id(br.from), id(br.to), br.r_pu, br.x_pu, br.b_pu, br.rate_mva, br.rate_mva, br.rate_mva, ratio, 0.0, 1.0, -360.0, 360.0]
        })
        .collect();
    matrix(&mut out, "branch", "fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax", &branch_rows);
    matrix(&mut out, "gencost", "2 startup shutdown n c2 c1 c0", &cost_rows);

    let bus_geo: Vec<Vec<f64>> = model
        .buses
        .iter()
        .map(|b| vec![b.id as f64, b.kind.code() as f64, b.location.lat, b.location.lon, b.group.map_or(-1.0, |g| g as f64)])
        .collect();
    matrix(&mut out, "bus_geo", "bus_i kind lat lon group", &bus_geo);
    cell(&mut out, "bus_origin", &model.buses.iter().map(|b| opt_str(&b.origin)).collect::<Vec<_>>());

    let branch_ext: Vec<Vec<f64>> = model
        .branches
        .iter()
        .map(|br| {
            let (kind, hi, lo) = match &br.kind {
                BranchKind::Line { path } => (1.0, path.voltage_kv, path.voltage_kv),
                BranchKind::Transformer { kv_hi, kv_lo } => (2.0, *kv_hi, *kv_lo),
            };
            let (cond, circ) = br.state.map_or((-1.0, -1.0), |s| (s.conductor as f64, s.circuits as f64));
            vec![kind, hi, lo, cond, circ, if br.doubled { 1.0 } else { 0.0 }, br.original_rate_mva.unwrap_or(-1.0)]
        })
        .collect();
    matrix(&mut out, "branch_ext", "kind kv_hi kv_lo conductor circuits doubled original_rate", &branch_ext);
    cell(&mut out, "branch_id", &model.branches.iter().map(|b| quote(&b.id)).collect::<Vec<_>>());

    matrix(&mut out, "gen_ext", "lat lon power_factor cost_kind", &gen_ext);
    cell(&mut out, "genfuel", &fuels);
    cell(&mut out, "gen_id", &gen_ids);
    cell(&mut out, "gen_plant", &plant);
    cell(&mut out, "gen_unit", &unit);

    let loads: Vec<Vec<f64>> = model.loads.iter().map(|l| vec![id(l.bus), l.peak_mw, l.location.lat, l.location.lon]).collect();
    matrix(&mut out, "load", "bus peak_mw lat lon", &loads);
    cell(&mut out, "load_id", &model.loads.iter().map(|l| quote(&l.tract_id)).collect::<Vec<_>>());

    Ok(CaseExport { matpower: out, geojson: paths_geojson(model) })
}

/// One LineString feature per line branch, keyed by branch id.
pub fn paths_geojson(model: &GridModel) -> String {
    let features: Vec<Value> = model
        .lines()
        .filter_map(|(_, br)| br.path().map(|p| (br, p)))
        .map(|(br, p)| {
            json!({
                "type": "Feature",
                "properties": {
                    "branch_id": br.id,
                    "path_id": p.id,
                    "voltage_kv": p.voltage_kv,
                    "owner": p.owner,
                    "name": p.name,
                    "rate_mva": br.rate_mva,
                },
                "geometry": {
                    "type": "LineString",
                    "coordinates": p.points.iter().map(|q| [q.lon, q.lat]).collect::<Vec<_>>(),
                },
            })
        })
        .collect();
    serde_json::to_string_pretty(&json!({ "type": "FeatureCollection", "features": features })).expect("serializable")
}

enum Entry {
    Matrix(Vec<Vec<f64>>),
    Cell(Vec<String>),
    Scalar(String),
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, c) in line.char_indices() {
        match c {
            '\'' => in_str = !in_str,
            '%' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_string(tok: &str) -> Option<String> {
    let t = tok.trim();
    let inner = t.strip_prefix('\'')?.strip_suffix('\'')?;
    Some(inner.replace("''", "'"))
}

fn parse_entries(text: &str) -> Result<BTreeMap<String, Entry>> {
    let err = |m: String| GridError::schema("case", "mpc", "syntax", m);
    let mut out = BTreeMap::new();
    let mut lines = text.lines().map(strip_comment);
    while let Some(line) = lines.next() {
        let line = line.trim();
        let Some(rest) = line.strip_prefix("mpc.") else { continue };
        let (name, value) = rest.split_once('=').ok_or_else(|| err(format!("missing `=` in `{line}`")))?;
        let name = name.trim().to_string();
        let value = value.trim();
        if value.starts_with('[') || value.starts_with('{') {
            let is_matrix = value.starts_with('[');
            let close = if is_matrix { "];" } else { "};" };
            let mut body = value[1..].to_string();
            while !body.trim_end().ends_with(close) {
                let next = lines.next().ok_or_else(|| err(format!("unterminated table {name}")))?;
                body.push('\n');
                body.push_str(next);
            }
            let body = body.trim_end().strip_suffix(close).expect("checked");
            let rows = body.split(|c| c == ';' || c == '\n').map(str::trim).filter(|r| !r.is_empty());
            if is_matrix {
                let parsed = rows
                    .map(|r| {
                        r.split(|c: char| c.is_whitespace() || c == ',')
                            .filter(|t| !t.is_empty())
                            .map(|t| t.parse::<f64>().map_err(|e| err(format!("{name}: `{t}`: {e}"))))
                            .collect::<Result<Vec<f64>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.insert(name, Entry::Matrix(parsed));
            } else {
                let parsed = rows.map(|r| parse_string(r).ok_or_else(|| err(format!("{name}: bad string `{r}`")))).collect::<Result<Vec<_>>>()?;
                out.insert(name, Entry::Cell(parsed));
            }
        } else {
            out.insert(name, Entry::Scalar(value.trim_end_matches(';').trim().to_string()));
        }
    }
    Ok(out)
}

struct Tables(BTreeMap<String, Entry>);

impl Tables {
    fn matrix(&self, name: &str, cols: usize) -> Result<&[Vec<f64>]> {
        match self.0.get(name) {
            Some(Entry::Matrix(m)) => {
                if let Some((i, r)) = m.iter().enumerate().find(|(_, r)| r.len() < cols) {
                    return Err(GridError::schema("case", format!("{name} row {}", i + 1), "columns", format!("expected {cols}, found {}", r.len())));
                }
                Ok(m)
            }
            _ => Err(GridError::schema("case", name, "table", "missing")),
        }
    }

    fn cell(&self, name: &str, len: usize) -> Result<&[String]> {
        match self.0.get(name) {
            Some(Entry::Cell(c)) if c.len() == len => Ok(c),
            Some(Entry::Cell(c)) => Err(GridError::schema("case", name, "cell", format!("expected {len} entries, found {}", c.len()))),
            _ => Err(GridError::schema("case", name, "cell", "missing")),
        }
    }

    fn scalar(&self, name: &str) -> Result<&str> {
        match self.0.get(name) {
            Some(Entry::Scalar(s)) => Ok(s),
            _ => Err(GridError::schema("case", name, "value", "missing")),
        }
    }

    fn number(&self, name: &str) -> Result<f64> {
        let s = self.scalar(name)?;
        s.parse().map_err(|_| GridError::schema("case", name, "value", format!("not a number: {s}")))
    }
}

fn non_empty(s: &str) -> Option<String> {
    (!s.is_empty()).then(|| s.to_string())
}

fn parse_paths(geojson: &str) -> Result<BTreeMap<String, LinePath>> {
    let file = "case paths";
    let v: Value = serde_json::from_str(geojson).map_err(|e| GridError::schema(file, "-", "json", e))?;
    let features = v["features"].as_array().ok_or_else(|| GridError::schema(file, "-", "features", "missing"))?;
    let mut out = BTreeMap::new();
    for (i, f) in features.iter().enumerate() {
        let p = &f["properties"];
        let field = |k: &str| p[k].as_str().map(str::to_string);
        let id = field("branch_id").ok_or_else(|| GridError::schema(file, i, "branch_id", "missing"))?;
        let coords = f["geometry"]["coordinates"].as_array().ok_or_else(|| GridError::schema(file, &id, "coordinates", "missing"))?;
        let points = coords
            .iter()
            .map(|c| match (c[0].as_f64(), c[1].as_f64()) {
                (Some(lon), Some(lat)) => Ok(GeoPoint { lat, lon }),
                _ => Err(GridError::schema(file, &id, "coordinates", "not a number pair")),
            })
            .collect::<Result<Vec<_>>>()?;
        let kv = p["voltage_kv"].as_f64().ok_or_else(|| GridError::schema(file, &id, "voltage_kv", "missing"))?;
        let path = LinePath::new(field("path_id").unwrap_or_else(|| id.clone()), points, kv, field("owner"), field("name"))?;
        out.insert(id, path);
    }
    Ok(out)
}

/// Rebuilds a model from case text and its path sidecar.
pub fn import_case(matpower: &str, geojson: &str) -> Result<GridModel> {
    let t = Tables(parse_entries(matpower)?);
    let mut paths = parse_paths(geojson)?;
    let bus = t.matrix("bus", 13)?;
    let geo = t.matrix("bus_geo", 5)?;
    if geo.len() != bus.len() {
        return Err(GridError::schema("case", "bus_geo", "rows", "does not match bus table"));
    }
    let origin = t.cell("bus_origin", bus.len())?;
    let mut model = GridModel::new(parse_string(t.scalar("name")?).unwrap_or_default());
    model.base_mva = t.number("baseMVA")?;
    model.load_q_ratio = t.number("load_q_ratio")?;
    for ((row, g), o) in bus.iter().zip(geo).zip(origin) {
        let kind = BusKind::from_code(g[1] as u8).ok_or_else(|| GridError::schema("case", row[0], "kind", "unknown bus kind"))?;
        model.buses.push(Bus {
            id: row[0] as u32,
            voltage_kv: row[9],
            kind,
            location: GeoPoint { lat: g[2], lon: g[3] },
            origin: non_empty(o),
            group: (g[4] >= 0.0).then_some(g[4] as u32),
        });
    }
    let index: BTreeMap<u32, usize> = model.buses.iter().enumerate().map(|(k, b)| (b.id, k)).collect();
    let bus_of = |v: f64, what: &str| index.get(&(v as u32)).copied().ok_or_else(|| GridError::schema("case", what, "bus", format!("unknown bus {v}")));

    let br = t.matrix("branch", 13)?;
    let ext = t.matrix("branch_ext", 7)?;
    let ids = t.cell("branch_id", br.len())?;
    if ext.len() != br.len() {
        return Err(GridError::schema("case", "branch_ext", "rows", "does not match branch table"));
    }
    for ((row, e), id) in br.iter().zip(ext).zip(ids) {
        let (from, to) = (bus_of(row[0], id)?, bus_of(row[1], id)?);
        let mut b = if e[0] == 1.0 {
            let path = paths.remove(id).ok_or_else(|| GridError::schema("case paths", id, "branch_id", "no path for line"))?;
            Branch::line(id.clone(), from, to, path)
        } else {
            Branch::transformer(id.clone(), from, to, e[1], e[2])
        };
        b.r_pu = row[2];
        b.x_pu = row[3];
        b.b_pu = row[4];
        b.rate_mva = row[5];
        b.state = (e[3] >= 0.0).then_some(LineState { conductor: e[3] as usize, circuits: e[4] as u32 });
        b.doubled = e[5] != 0.0;
        b.original_rate_mva = (e[6] >= 0.0).then_some(e[6]);
        model.branches.push(b);
    }
    if let Some(extra) = paths.keys().next() {
        return Err(GridError::schema("case paths", extra, "branch_id", "path without a line branch"));
    }

    let gen = t.matrix("gen", 10)?;
    let cost = t.matrix("gencost", 7)?;
    let gext = t.matrix("gen_ext", 4)?;
    let fuels = t.cell("genfuel", gen.len())?;
    let gids = t.cell("gen_id", gen.len())?;
    let plant = t.cell("gen_plant", gen.len())?;
    let unit = t.cell("gen_unit", gen.len())?;
    if cost.len() != gen.len() || gext.len() != gen.len() {
        return Err(GridError::schema("case", "gencost", "rows", "does not match gen table"));
    }
    for k in 0..gen.len() {
        let (row, c, e) = (&gen[k], &cost[k], &gext[k]);
        let bus = bus_of(row[0], &gids[k])?;
        if fuels[k] == CONDENSER_FUEL {
            model.condensers.push(Condenser { bus, qmax_mvar: row[3], active: row[7] != 0.0 });
            continue;
        }
        let fuel: FuelType = fuels[k].parse().map_err(|_| GridError::schema("case", &gids[k], "genfuel", format!("unknown fuel {}", fuels[k])))?;
        if c[0] != 2.0 || c[3] != 3.0 {
            return Err(GridError::schema("case", &gids[k], "gencost", "expected a 3-term polynomial"));
        }
        let kind = cost_kind(e[3]).ok_or_else(|| GridError::schema("case", &gids[k], "cost_kind", "unknown"))?;
        model.generators.push(Generator {
            id: gids[k].clone(),
            bus,
            fuel,
            location: GeoPoint { lat: e[0], lon: e[1] },
            pmax_mw: row[8],
            pmin_mw: row[9],
            qmax_mvar: row[3],
            qmin_mvar: row[4],
            power_factor: e[2],
            cost: CostCurve { c2: c[4], c1: c[5], c0: c[6], kind },
            plant_code: non_empty(&plant[k]),
            unit_id: non_empty(&unit[k]),
        });
    }

    let load = t.matrix("load", 4)?;
    let lids = t.cell("load_id", load.len())?;
    for (row, id) in load.iter().zip(lids) {
        model.loads.push(Load { tract_id: id.clone(), bus: bus_of(row[0], id)?, location: GeoPoint { lat: row[2], lon: row[3] }, peak_mw: row[1] });
    }
    model.validate(true)?;
    Ok(model)
}

pub fn case_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.m")), dir.join(format!("{stem}_paths.geojson")))
}

pub fn write_case(dir: &Path, stem: &str, case: &CaseExport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| GridError::io(dir, e))?;
    let (m, g) = case_paths(dir, stem);
    std::fs::write(&m, &case.matpower).map_err(|e| GridError::io(&m, e))?;
    std::fs::write(&g, &case.geojson).map_err(|e| GridError::io(&g, e))?;
    Ok(())
}

pub fn read_case(dir: &Path, stem: &str) -> Result<GridModel> {
    let (m, g) = case_paths(dir, stem);
    let mp = std::fs::read_to_string(&m).map_err(|e| GridError::io(&m, e))?;
    let gj = std::fs::read_to_string(&g).map_err(|e| GridError::io(&g, e))?;
    import_case(&mp, &gj)
}
