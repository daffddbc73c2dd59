//! Electrical graph construction from geographic records.
//!
//! Passes run in order: endpoint connection, self-loop removal, segmentation of
//! lines that other lines tap into, generator attachment, voltage-level
//! splitting, largest-component extraction and connectivity diagnostics.

use std::collections::{BTreeMap, BTreeSet};

use petgraph::graph::{NodeIndex, UnGraph};
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::geodata::{geo_distance, meters_to_miles, GeoDataset, GeoPoint, LinePath, PointIndex, SubstationRecord};
use crate::model::{Branch, Bus, BusKind, Generator, GridModel};
use crate::par::{self, ExecMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyConfig {
    pub radius_m: f64,
    pub micro_segment_m: f64,
    pub diagnose_radius_m: f64,
    pub discrepancy_ratio: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self { radius_m: 12.0, micro_segment_m: 1.0, diagnose_radius_m: 500.0, discrepancy_ratio: 10.0 }
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.radius_m > 0.0
            && self.micro_segment_m >= 0.0
            && self.diagnose_radius_m > 0.0
            && self.discrepancy_ratio >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(GridError::Validation(format!("invalid topology settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    DistanceDiscrepancy,
    SameNodeBothEnds,
    MicroSegment,
}

impl DefectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DefectKind::DistanceDiscrepancy => "distance_discrepancy",
            DefectKind::SameNodeBothEnds => "same_node_both_ends",
            DefectKind::MicroSegment => "micro_segment",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDiagnostic {
    pub kind: DefectKind,
    pub bus_a: u32,
    pub bus_b: u32,
    pub graph_distance_miles: f64,
    pub geo_distance_miles: f64,
    pub ratio: f64,
    /// Line involved, when the defect concerns a single line.
    pub line: Option<String>,
}

/// CSV `kind,bus_a,bus_b,graph_mi,geo_mi,ratio`.
pub fn diagnostics_to_csv(diags: &[TopologyDiagnostic]) -> String {
    let mut out = String::from("kind,bus_a,bus_b,graph_mi,geo_mi,ratio\n");
    for d in diags {
        out += &format!(
            "{},{},{},{},{},{}\n",
            d.kind.as_str(),
            d.bus_a,
            d.bus_b,
            d.graph_distance_miles,
            d.geo_distance_miles,
            d.ratio
        );
    }
    out
}

/// Line endpoints resolved to buses.
#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    pub buses: Vec<Bus>,
    /// `[start_bus, end_bus]` per input line.
    pub ends: Vec<[usize; 2]>,
}

/// One bus per substation, ids 1..=n in input order; voltage is set later.
pub fn substation_buses(subs: &[SubstationRecord]) -> Vec<Bus> {
    subs.iter()
        .enumerate()
        .map(|(i, s)| Bus {
            id: i as u32 + 1,
            voltage_kv: 0.0,
            kind: BusKind::Substation,
            location: s.location,
            origin: Some(s.id.clone()),
            group: None,
        })
        .collect()
}

/// Maps every endpoint to the nearest bus within `radius_m`, creating an
/// `Added` bus where none exists. Ties go to the lowest bus index.
pub fn connect_endpoints(lines: &[LinePath], buses: Vec<Bus>, radius_m: f64) -> Connection {
    let mut buses = buses;
    let mut index = PointIndex::from_points(radius_m, buses.iter().map(|b| b.location));
    let mut next_id = buses.iter().map(|b| b.id).max().unwrap_or(0) + 1;
    let mut ends = Vec::with_capacity(lines.len());
    for line in lines {
        let mut pair = [0usize; 2];
        for (slot, p) in pair.iter_mut().zip([line.start(), line.end()]) {
            *slot = match index.nearest_within(p, radius_m) {
                Some((i, _)) => i,
                None => {
                    buses.push(Bus {
                        id: next_id,
                        voltage_kv: 0.0,
                        kind: BusKind::Added,
                        location: p,
                        origin: None,
                        group: None,
                    });
                    next_id += 1;
                    index.insert(p)
                }
            };
        }
        ends.push(pair);
    }
    Connection { buses, ends }
}

/// Drops lines whose two endpoints share a bus.
pub fn remove_self_loops(lines: &mut Vec<LinePath>, conn: &mut Connection) -> Vec<TopologyDiagnostic> {
    let mut diags = Vec::new();
    let mut keep_lines = Vec::with_capacity(lines.len());
    let mut keep_ends = Vec::with_capacity(lines.len());
    for (line, e) in lines.drain(..).zip(conn.ends.drain(..)) {
        if e[0] == e[1] {
            let id = conn.buses[e[0]].id;
            diags.push(TopologyDiagnostic {
                kind: DefectKind::SameNodeBothEnds,
                bus_a: id,
                bus_b: id,
                graph_distance_miles: 0.0,
                geo_distance_miles: meters_to_miles(geo_distance(line.start(), line.end())),
                ratio: f64::NAN,
                line: Some(line.id.clone()),
            });
        } else {
            keep_lines.push(line);
            keep_ends.push(e);
        }
    }
    *lines = keep_lines;
    conn.ends = keep_ends;
    diags
}

fn piece_length_m(points: &[GeoPoint]) -> f64 {
    points.windows(2).map(|w| geo_distance(w[0], w[1])).sum()
}

/// Splits lines at interior vertices lying within `radius_m` of another
/// line's endpoint bus. Pieces shorter than `micro_m` are not created; the
/// split is skipped and reported instead.
pub fn segment_branching_lines(
    lines: &[LinePath],
    conn: &Connection,
    radius_m: f64,
    micro_m: f64,
) -> (Vec<LinePath>, Vec<[usize; 2]>, Vec<TopologyDiagnostic>) {
    let endpoint_buses: Vec<usize> =
        conn.ends.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let index = PointIndex::from_points(radius_m, endpoint_buses.iter().map(|&b| conn.buses[b].location));
    let mut out_lines = Vec::new();
    let mut out_ends = Vec::new();
    let mut diags = Vec::new();

    for (line, &[start_bus, end_bus]) in lines.iter().zip(&conn.ends) {
        let n = line.points.len();
        let mut cuts: Vec<(usize, usize)> = Vec::new();
        let mut piece_start = (0usize, start_bus);
        for v in 1..n.saturating_sub(1) {
            let p = line.points[v];
            let candidate = index
                .within(p, radius_m)
                .into_iter()
                .map(|(k, _)| endpoint_buses[k])
                .find(|&b| b != piece_start.1 && b != end_bus);
            let Some(bus) = candidate else { continue };
            let before = piece_length_m(&line.points[piece_start.0..=v]);
            let after = piece_length_m(&line.points[v..]);
            if before < micro_m || after < micro_m {
                let near = if before < micro_m { piece_start.1 } else { end_bus };
                diags.push(TopologyDiagnostic {
                    kind: DefectKind::MicroSegment,
                    bus_a: conn.buses[bus].id,
                    bus_b: conn.buses[near].id,
                    graph_distance_miles: 0.0,
                    geo_distance_miles: meters_to_miles(before.min(after)),
                    ratio: f64::NAN,
                    line: Some(line.id.clone()),
                });
                continue;
            }
            cuts.push((v, bus));
            piece_start = (v, bus);
        }
        if cuts.is_empty() {
            out_lines.push(line.clone());
            out_ends.push([start_bus, end_bus]);
            continue;
        }
        let mut from = (0usize, start_bus);
        let stops = cuts.iter().copied().chain(std::iter::once((n - 1, end_bus)));
        for (k, (v, bus)) in stops.enumerate() {
            let piece = LinePath::new(
                format!("{}/{}", line.id, k + 1),
                line.points[from.0..=v].to_vec(),
                line.voltage_kv,
                line.owner.clone(),
                line.name.clone(),
            )
            .expect("pieces longer than the micro threshold are valid paths");
            out_lines.push(piece);
            out_ends.push([from.1, bus]);
            from = (v, bus);
        }
    }
    (out_lines, out_ends, diags)
}

/// Splits each multi-voltage bus into a chain of buses joined by transformers,
/// highest voltage first. The original bus keeps the highest voltage, so
/// generators already attached to it end up on the highest level.
pub fn split_voltage_levels(model: &mut GridModel) {
    let mut levels: Vec<BTreeSet<u64>> = vec![BTreeSet::new(); model.buses.len()];
    for br in &model.branches {
        if br.is_line() {
            let kv = br.voltage_kv().to_bits();
            levels[br.from].insert(kv);
            levels[br.to].insert(kv);
        }
    }
    let mut next_id = model.next_bus_id();
    let mut level_bus: Vec<BTreeMap<u64, usize>> = vec![BTreeMap::new(); model.buses.len()];
    let original_count = model.buses.len();
    for b in 0..original_count {
        let mut kvs: Vec<f64> = levels[b].iter().map(|&k| f64::from_bits(k)).collect();
        kvs.sort_by(|x, y| y.total_cmp(x));
        let Some(&top) = kvs.first() else { continue };
        model.buses[b].voltage_kv = top;
        level_bus[b].insert(top.to_bits(), b);
        let mut prev = b;
        for (k, &kv) in kvs.iter().enumerate().skip(1) {
            let parent = &model.buses[b];
            let bus = Bus {
                id: next_id,
                voltage_kv: kv,
                kind: BusKind::VoltageSplit,
                location: parent.location,
                origin: None,
                group: Some(parent.id),
            };
            next_id += 1;
            model.buses.push(bus);
            let idx = model.buses.len() - 1;
            level_bus[b].insert(kv.to_bits(), idx);
            let hi = model.buses[prev].voltage_kv;
            let id = format!("T{}-{}", model.buses[b].id, k);
            model.branches.push(Branch::transformer(id, prev, idx, hi, kv));
            prev = idx;
        }
    }
    for br in model.branches.iter_mut() {
        if br.is_line() {
            let kv = br.voltage_kv().to_bits();
            br.from = level_bus[br.from][&kv];
            br.to = level_bus[br.to][&kv];
        }
    }
}

/// Group key shared by a bus and the buses split off it.
pub fn bus_group(model: &GridModel, bus: usize) -> u32 {
    let b = &model.buses[bus];
    b.group.unwrap_or(b.id)
}

/// Lowest-voltage bus in the split group of `bus`.
pub fn lowest_voltage_bus(model: &GridModel, bus: usize) -> usize {
    let g = bus_group(model, bus);
    (0..model.buses.len())
        .filter(|&i| bus_group(model, i) == g)
        .min_by(|&a, &b| model.buses[a].voltage_kv.total_cmp(&model.buses[b].voltage_kv).then(a.cmp(&b)))
        .unwrap_or(bus)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retained {
    pub kept: usize,
    pub total: usize,
}

impl Retained {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.kept as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionReport {
    pub buses: Retained,
    pub branches: Retained,
    pub lines: Retained,
    pub generators: Retained,
    pub loads: Retained,
}

/// Component label per bus (representative index) via union-find over branches.
pub fn component_labels(model: &GridModel) -> Vec<usize> {
    let mut uf = UnionFind::<usize>::new(model.buses.len());
    for br in &model.branches {
        uf.union(br.from, br.to);
    }
    (0..model.buses.len()).map(|i| uf.find(i)).collect()
}

pub fn is_connected(model: &GridModel) -> bool {
    let labels = component_labels(model);
    labels.windows(2).all(|w| w[0] == w[1])
}

/// Keeps the component with the most buses (ties: the one holding the lowest
/// bus index) and removes everything attached elsewhere.
pub fn largest_component(model: &GridModel) -> Result<(GridModel, RetentionReport)> {
    if model.buses.is_empty() {
        return Err(GridError::Validation("cannot select a component of an empty graph".into()));
    }
    let labels = component_labels(model);
    let mut sizes: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        let e = sizes.entry(l).or_insert((0, i));
        e.0 += 1;
        e.1 = e.1.min(i);
    }
    let keep_label = sizes
        .iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(&l, _)| l)
        .expect("non-empty");
    let keep: Vec<bool> = labels.iter().map(|&l| l == keep_label).collect();
    let (pruned, _) = retain_buses(model, &keep);
    let report = RetentionReport {
        buses: Retained { kept: pruned.buses.len(), total: model.buses.len() },
        branches: Retained { kept: pruned.branches.len(), total: model.branches.len() },
        lines: Retained { kept: pruned.n_lines(), total: model.n_lines() },
        generators: Retained { kept: pruned.generators.len(), total: model.generators.len() },
        loads: Retained { kept: pruned.loads.len(), total: model.loads.len() },
    };
    Ok((pruned, report))
}

/// Copy of `model` restricted to buses with `keep[i]`, with indices remapped.
pub fn retain_buses(model: &GridModel, keep: &[bool]) -> (GridModel, Vec<Option<usize>>) {
    let mut map = vec![None; model.buses.len()];
    let mut out = GridModel { buses: Vec::new(), branches: Vec::new(), generators: Vec::new(), loads: Vec::new(), condensers: Vec::new(), ..model.clone() };
    for (i, b) in model.buses.iter().enumerate() {
        if keep[i] {
            map[i] = Some(out.buses.len());
            out.buses.push(b.clone());
        }
    }
    for br in &model.branches {
        if let (Some(f), Some(t)) = (map[br.from], map[br.to]) {
            out.branches.push(Branch { from: f, to: t, ..br.clone() });
        }
    }
    for g in &model.generators {
        if let Some(b) = map[g.bus] {
            out.generators.push(Generator { bus: b, ..g.clone() });
        }
    }
    for l in &model.loads {
        if let Some(b) = map[l.bus] {
            out.loads.push(crate::model::Load { bus: b, ..l.clone() });
        }
    }
    for c in &model.condensers {
        if let Some(b) = map[c.bus] {
            out.condensers.push(crate::model::Condenser { bus: b, ..c.clone() });
        }
    }
    (out, map)
}

/// Graph/geographic distance comparison over nearby bus pairs.
pub fn diagnose(model: &GridModel, cfg: &TopologyConfig, mode: ExecMode) -> Vec<TopologyDiagnostic> {
    let n = model.buses.len();
    let mut graph = UnGraph::<(), f64>::with_capacity(n, model.branches.len());
    for _ in 0..n {
        graph.add_node(());
    }
    for br in &model.branches {
        graph.add_edge(NodeIndex::new(br.from), NodeIndex::new(br.to), br.length_miles());
    }
    let index = PointIndex::from_points(cfg.diagnose_radius_m, model.buses.iter().map(|b| b.location));
    let groups: Vec<u32> = (0..n).map(|i| bus_group(model, i)).collect();

    let per_source = par::map_range(mode, n, |i| {
        let near: Vec<(usize, f64)> = index
            .within(model.buses[i].location, cfg.diagnose_radius_m)
            .into_iter()
            .filter(|&(j, _)| j > i && groups[j] != groups[i])
            .collect();
        if near.is_empty() {
            return Vec::new();
        }
        let dist = petgraph::algo::dijkstra(&graph, NodeIndex::new(i), None, |e| *e.weight());
        near.into_iter()
            .filter_map(|(j, d_m)| {
                let geo = meters_to_miles(d_m);
                let graph_mi = dist.get(&NodeIndex::new(j)).copied().unwrap_or(f64::INFINITY);
                let ratio = if geo > 0.0 { graph_mi / geo } else if graph_mi > 0.0 { f64::INFINITY } else { 1.0 };
                (ratio > cfg.discrepancy_ratio || graph_mi.is_infinite()).then(|| TopologyDiagnostic {
                    kind: DefectKind::DistanceDiscrepancy,
                    bus_a: model.buses[i].id,
                    bus_b: model.buses[j].id,
                    graph_distance_miles: graph_mi,
                    geo_distance_miles: geo,
                    ratio,
                    line: None,
                })
            })
            .collect()
    });
    per_source.into_iter().flatten().collect()
}

/// Outcome of the full topology pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyResult {
    pub model: GridModel,
    pub diagnostics: Vec<TopologyDiagnostic>,
    pub retention: RetentionReport,
}

/// Runs every topology pass on an (already edited) dataset.
pub fn build_topology(ds: &GeoDataset, cfg: &TopologyConfig, mode: ExecMode) -> Result<TopologyResult> {
    cfg.validate()?;
    let mut lines = ds.lines.clone();
    let mut conn = connect_endpoints(&lines, substation_buses(&ds.substations), cfg.radius_m);
    let mut diagnostics = remove_self_loops(&mut lines, &mut conn);
    let (lines, ends, micro) = segment_branching_lines(&lines, &conn, cfg.radius_m, cfg.micro_segment_m);
    diagnostics.extend(micro);

    let mut model = GridModel::new("grid");
    model.buses = conn.buses;
    model.branches = lines
        .into_iter()
        .zip(&ends)
        .map(|(path, e)| Branch::line(path.id.clone(), e[0], e[1], path))
        .collect();

    // Substations that no line reaches carry no electrical connection.
    let mut touched = vec![false; model.buses.len()];
    for br in &model.branches {
        touched[br.from] = true;
        touched[br.to] = true;
    }
    model = retain_buses(&model, &touched).0;
    if model.buses.is_empty() {
        return Err(GridError::Validation("no line connects to any bus".into()));
    }

    attach_generators(&mut model, ds);
    split_voltage_levels(&mut model);
    let (model, retention) = largest_component(&model)?;
    diagnostics.extend(diagnose(&model, cfg, mode));
    Ok(TopologyResult { model, diagnostics, retention })
}

/// Attaches each generator to its closest substation bus (any bus when no
/// substation bus exists). Cost and reactive limits are filled in later.
pub fn attach_generators(model: &mut GridModel, ds: &GeoDataset) {
    let candidates: Vec<usize> = {
        let subs: Vec<usize> =
            (0..model.buses.len()).filter(|&i| model.buses[i].kind == BusKind::Substation).collect();
        if subs.is_empty() {
            (0..model.buses.len()).collect()
        } else {
            subs
        }
    };
    for g in &ds.generators {
        let bus = candidates
            .iter()
            .copied()
            .min_by(|&a, &b| {
                geo_distance(g.location, model.buses[a].location)
                    .total_cmp(&geo_distance(g.location, model.buses[b].location))
                    .then(a.cmp(&b))
            })
            .expect("model has buses");
        model.generators.push(Generator {
            id: g.id.clone(),
            bus,
            fuel: g.fuel_type,
            location: g.location,
            pmax_mw: g.pmax_mw,
            pmin_mw: g.pmin_mw,
            qmax_mvar: 0.0,
            qmin_mvar: 0.0,
            power_factor: g.power_factor,
            cost: crate::assignment::CostCurve::zero(),
            plant_code: g.plant_code.clone(),
            unit_id: g.unit_id.clone(),
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineEnd {
    Start,
    End,
}

/// Declarative replacement for manual GIS fixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    /// Removes a substation (or an added node, referenced by its numeric bus
    /// id) and extends the lines ending there to the nearest substation.
    DeleteNode { id: String },
    MergeLines { a: String, b: String },
    DeleteLine { id: String },
    ExtendLine { id: String, point: GeoPoint },
    MoveEndpoint { id: String, end: LineEnd, node: String },
}

pub type EditScript = Vec<Edit>;

pub fn parse_edit_script(text: &str) -> Result<EditScript> {
    serde_json::from_str(text).map_err(|e| GridError::schema("edit script", format!("line {}", e.line()), "edit", e))
}

fn line_pos(ds: &GeoDataset, id: &str, k: usize) -> Result<usize> {
    ds.lines
        .iter()
        .position(|l| l.id == id)
        .ok_or_else(|| GridError::Validation(format!("edit {k}: unknown line `{id}`")))
}

/// Location of a node reference and its substation index, if any.
fn resolve_node(ds: &GeoDataset, id: &str, radius_m: f64, k: usize) -> Result<(GeoPoint, Option<usize>)> {
    if let Some(i) = ds.substations.iter().position(|s| s.id == id) {
        return Ok((ds.substations[i].location, Some(i)));
    }
    if let Ok(bus_id) = id.parse::<u32>() {
        let conn = connect_endpoints(&ds.lines, substation_buses(&ds.substations), radius_m);
        if let Some(b) = conn.buses.iter().find(|b| b.id == bus_id) {
            return Ok((b.location, None));
        }
    }
    Err(GridError::Validation(format!("edit {k}: unknown node `{id}`")))
}

fn rebuild(line: &LinePath, points: Vec<GeoPoint>, k: usize) -> Result<LinePath> {
    LinePath::new(line.id.clone(), points, line.voltage_kv, line.owner.clone(), line.name.clone())
        .map_err(|e| GridError::Validation(format!("edit {k}: {e}")))
}

/// Applies edits in order to the geographic layer. Reconnection is left to
/// the caller.
pub fn apply_edits(ds: &GeoDataset, script: &[Edit], radius_m: f64) -> Result<GeoDataset> {
    let mut ds = ds.clone();
    for (k, edit) in script.iter().enumerate() {
        match edit {
            Edit::DeleteNode { id } => {
                let (loc, sub) = resolve_node(&ds, id, radius_m, k)?;
                if let Some(i) = sub {
                    ds.substations.remove(i);
                }
                let target = ds
                    .substations
                    .iter()
                    .min_by(|a, b| geo_distance(loc, a.location).total_cmp(&geo_distance(loc, b.location)))
                    .map(|s| s.location)
                    .ok_or_else(|| GridError::Validation(format!("edit {k}: no substation left to reconnect to")))?;
                for i in 0..ds.lines.len() {
                    let line = &ds.lines[i];
                    let mut pts = line.points.clone();
                    let mut changed = false;
                    if geo_distance(line.start(), loc) <= radius_m {
                        pts.insert(0, target);
                        changed = true;
                    }
                    if geo_distance(line.end(), loc) <= radius_m {
                        pts.push(target);
                        changed = true;
                    }
                    if changed {
                        ds.lines[i] = rebuild(line, pts, k)?;
                    }
                }
            }
            Edit::MergeLines { a, b } => {
                let ia = line_pos(&ds, a, k)?;
                let ib = line_pos(&ds, b, k)?;
                if ia == ib {
                    return Err(GridError::Validation(format!("edit {k}: cannot merge `{a}` with itself")));
                }
                let (la, lb) = (&ds.lines[ia], &ds.lines[ib]);
                if la.voltage_kv != lb.voltage_kv {
                    return Err(GridError::Validation(format!("edit {k}: `{a}` and `{b}` differ in voltage")));
                }
                let rev = |v: &[GeoPoint]| v.iter().rev().copied().collect::<Vec<_>>();
                let options = [
                    (la.end(), lb.start(), [la.points.clone(), lb.points.clone()]),
                    (la.end(), lb.end(), [la.points.clone(), rev(&lb.points)]),
                    (la.start(), lb.end(), [lb.points.clone(), la.points.clone()]),
                    (la.start(), lb.start(), [rev(&lb.points), la.points.clone()]),
                ];
                let (_, _, parts) = options
                    .into_iter()
                    .map(|(p, q, parts)| (geo_distance(p, q), p, parts))
                    .filter(|(d, _, _)| *d <= radius_m)
                    .min_by(|x, y| x.0.total_cmp(&y.0))
                    .ok_or_else(|| GridError::Validation(format!("edit {k}: `{a}` and `{b}` share no endpoint")))?;
                let merged = rebuild(la, parts.concat(), k)?;
                ds.lines[ia] = merged;
                ds.lines.remove(ib);
            }
            Edit::DeleteLine { id } => {
                let i = line_pos(&ds, id, k)?;
                ds.lines.remove(i);
            }
            Edit::ExtendLine { id, point } => {
                let i = line_pos(&ds, id, k)?;
                let line = &ds.lines[i];
                let mut pts = line.points.clone();
                if geo_distance(line.start(), *point) < geo_distance(line.end(), *point) {
                    pts.insert(0, *point);
                } else {
                    pts.push(*point);
                }
                ds.lines[i] = rebuild(line, pts, k)?;
            }
            Edit::MoveEndpoint { id, end, node } => {
                let i = line_pos(&ds, id, k)?;
                let (loc, _) = resolve_node(&ds, node, radius_m, k)?;
                let line = &ds.lines[i];
                let mut pts = line.points.clone();
                match end {
                    LineEnd::Start => pts[0] = loc,
                    LineEnd::End => *pts.last_mut().expect("non-empty") = loc,
                }
                ds.lines[i] = rebuild(line, pts, k)?;
            }
        }
    }
    Ok(ds)
}
