//! Geographic infrastructure records, great-circle geometry and ingestion of
//! the line/substation/generator/load input files.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const METERS_PER_MILE: f64 = 1609.344;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Validated constructor: finite, lat in [-90, 90], lon in [-180, 180].
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GridError::Validation(format!("non-finite coordinate ({lat}, {lon})")));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GridError::Validation(format!("latitude {lat} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GridError::Validation(format!("longitude {lon} outside [-180, 180]")));
        }
        Ok(Self { lat, lon })
    }
}

/// Haversine great-circle distance in meters.
pub fn geo_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

pub fn meters_to_miles(m: f64) -> f64 {
    m / METERS_PER_MILE
}

/// Point at fraction `t` along the great circle from `a` to `b`.
pub fn interpolate(a: GeoPoint, b: GeoPoint, t: f64) -> GeoPoint {
    let d = geo_distance(a, b) / EARTH_RADIUS_M;
    if d < 1e-15 {
        return a;
    }
    let (phi1, l1) = (a.lat.to_radians(), a.lon.to_radians());
    let (phi2, l2) = (b.lat.to_radians(), b.lon.to_radians());
    let wa = ((1.0 - t) * d).sin() / d.sin();
    let wb = (t * d).sin() / d.sin();
    let x = wa * phi1.cos() * l1.cos() + wb * phi2.cos() * l2.cos();
    let y = wa * phi1.cos() * l1.sin() + wb * phi2.cos() * l2.sin();
    let z = wa * phi1.sin() + wb * phi2.sin();
    GeoPoint { lat: z.atan2((x * x + y * y).sqrt()).to_degrees(), lon: y.atan2(x).to_degrees() }
}

/// A transmission corridor as an ordered polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinePath {
    pub id: String,
    pub points: Vec<GeoPoint>,
    pub voltage_kv: f64,
    pub owner: Option<String>,
    pub name: Option<String>,
}

impl LinePath {
    /// Drops consecutive duplicate vertices and checks the remaining invariants.
    pub fn new(
        id: impl Into<String>,
        points: Vec<GeoPoint>,
        voltage_kv: f64,
        owner: Option<String>,
        name: Option<String>,
    ) -> Result<Self> {
        let id = id.into();
        let mut clean: Vec<GeoPoint> = Vec::with_capacity(points.len());
        for p in points {
            if clean.last() != Some(&p) {
                clean.push(p);
            }
        }
        if clean.len() < 2 {
            return Err(GridError::Validation(format!("line {id} has fewer than two distinct points")));
        }
        if !(voltage_kv > 0.0) || !voltage_kv.is_finite() {
            return Err(GridError::Validation(format!("line {id} has voltage {voltage_kv} kV")));
        }
        Ok(Self { id, points: clean, voltage_kv, owner, name })
    }

    pub fn start(&self) -> GeoPoint {
        self.points[0]
    }

    pub fn end(&self) -> GeoPoint {
        self.points[self.points.len() - 1]
    }

    pub fn length_miles(&self) -> f64 {
        path_length(self)
    }
}

/// Polyline length in miles.
pub fn path_length(path: &LinePath) -> f64 {
    meters_to_miles(path.points.windows(2).map(|w| geo_distance(w[0], w[1])).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstationRecord {
    pub id: String,
    pub location: GeoPoint,
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuelType {
    Solar,
    Wind,
    NgCombinedCycle,
    NgCombustionTurbine,
    NgSteamTurbine,
    NgInternalCombustion,
    OtherNaturalGas,
    Nuclear,
    Hydro,
    Geothermal,
    Biomass,
    LandfillGas,
    MunicipalSolidWaste,
    Import,
    Other,
}

impl FuelType {
    pub const ALL: [FuelType; 15] = [
        FuelType::Solar,
        FuelType::Wind,
        FuelType::NgCombinedCycle,
        FuelType::NgCombustionTurbine,
        FuelType::NgSteamTurbine,
        FuelType::NgInternalCombustion,
        FuelType::OtherNaturalGas,
        FuelType::Nuclear,
        FuelType::Hydro,
        FuelType::Geothermal,
        FuelType::Biomass,
        FuelType::LandfillGas,
        FuelType::MunicipalSolidWaste,
        FuelType::Import,
        FuelType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FuelType::Solar => "solar",
            FuelType::Wind => "wind",
            FuelType::NgCombinedCycle => "ng_combined_cycle",
            FuelType::NgCombustionTurbine => "ng_combustion_turbine",
            FuelType::NgSteamTurbine => "ng_steam_turbine",
            FuelType::NgInternalCombustion => "ng_internal_combustion",
            FuelType::OtherNaturalGas => "other_natural_gas",
            FuelType::Nuclear => "nuclear",
            FuelType::Hydro => "hydro",
            FuelType::Geothermal => "geothermal",
            FuelType::Biomass => "biomass",
            FuelType::LandfillGas => "landfill_gas",
            FuelType::MunicipalSolidWaste => "municipal_solid_waste",
            FuelType::Import => "import",
            FuelType::Other => "other",
        }
    }

    /// Zero-cost resources.
    pub fn is_renewable(self) -> bool {
        matches!(self, FuelType::Solar | FuelType::Wind | FuelType::Hydro | FuelType::Geothermal)
    }

    /// Resources whose hourly availability follows the statewide solar/wind totals.
    pub fn is_scalable(self) -> bool {
        matches!(self, FuelType::Solar | FuelType::Wind)
    }

    /// Fuel whose reference cost curves stand in for this one.
    pub fn cost_alias(self) -> FuelType {
        match self {
            FuelType::OtherNaturalGas => FuelType::NgSteamTurbine,
            FuelType::MunicipalSolidWaste => FuelType::LandfillGas,
            f => f,
        }
    }
}

impl fmt::Display for FuelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FuelType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
        let fuel = match key.as_str() {
            "solar" | "solarphotovoltaic" | "pv" | "sun" => FuelType::Solar,
            "wind" | "onshorewindturbine" | "wnd" => FuelType::Wind,
            "ngcombinedcycle" | "naturalgasfiredcombinedcycle" | "naturalgascombinedcycle" => {
                FuelType::NgCombinedCycle
            }
            "ngcombustionturbine" | "naturalgasfiredcombustionturbine" | "naturalgascombustionturbine" => {
                FuelType::NgCombustionTurbine
            }
            "ngsteamturbine" | "naturalgassteamturbine" => FuelType::NgSteamTurbine,
            "nginternalcombustion" | "naturalgasinternalcombustionengine" | "naturalgasinternalcombustion" => {
                FuelType::NgInternalCombustion
            }
            "othernaturalgas" => FuelType::OtherNaturalGas,
            "nuclear" | "nuc" => FuelType::Nuclear,
            "hydro" | "conventionalhydroelectric" | "hydroelectric" => FuelType::Hydro,
            "geothermal" | "geo" => FuelType::Geothermal,
            "biomass" | "woodwoodwastebiomass" | "otherwastebiomass" => FuelType::Biomass,
            "landfillgas" => FuelType::LandfillGas,
            "municipalsolidwaste" | "msw" => FuelType::MunicipalSolidWaste,
            "import" | "imports" => FuelType::Import,
            "other" => FuelType::Other,
            _ => return Err(format!("unknown fuel type `{s}`")),
        };
        Ok(fuel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub id: String,
    pub location: GeoPoint,
    pub fuel_type: FuelType,
    pub pmax_mw: f64,
    pub pmin_mw: f64,
    pub power_factor: f64,
    pub plant_code: Option<String>,
    pub unit_id: Option<String>,
}

impl GeneratorRecord {
    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.pmax_mw > 0.0) || !self.pmax_mw.is_finite() {
            return Err(("pmax_mw", format!("must be positive, got {}", self.pmax_mw)));
        }
        if !(self.pmin_mw >= 0.0) || self.pmin_mw > self.pmax_mw {
            return Err(("pmin_mw", format!("must lie in [0, pmax], got {}", self.pmin_mw)));
        }
        if !(self.power_factor > 0.0 && self.power_factor <= 1.0) {
            return Err(("pf", format!("must lie in (0, 1], got {}", self.power_factor)));
        }
        Ok(())
    }
}

/// Hourly demand of one census tract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRecord {
    pub tract_id: String,
    pub location: GeoPoint,
    pub profile: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeoDataset {
    pub lines: Vec<LinePath>,
    pub substations: Vec<SubstationRecord>,
    pub generators: Vec<GeneratorRecord>,
    pub loads: Vec<LoadRecord>,
}

impl GeoDataset {
    /// Number of hours in every load profile (0 when there are no loads).
    pub fn hours(&self) -> usize {
        self.loads.first().map_or(0, |l| l.profile.len())
    }

    /// System load per hour.
    pub fn hourly_total_load(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.hours()];
        for l in &self.loads {
            for (t, v) in total.iter_mut().zip(&l.profile) {
                *t += v;
            }
        }
        total
    }

    /// Checks cross-record invariants: unique ids and uniform profile length.
    pub fn validate(&self) -> Result<()> {
        fn unique<'a>(file: &str, ids: impl Iterator<Item = &'a str>) -> Result<()> {
            let mut seen = HashSet::new();
            for id in ids {
                if !seen.insert(id) {
                    return Err(GridError::schema(file, id, "id", "duplicate id"));
                }
            }
            Ok(())
        }
        unique("lines", self.lines.iter().map(|l| l.id.as_str()))?;
        unique("substations", self.substations.iter().map(|s| s.id.as_str()))?;
        unique("generators", self.generators.iter().map(|g| g.id.as_str()))?;
        unique("loads", self.loads.iter().map(|l| l.tract_id.as_str()))?;
        let h = self.hours();
        for l in &self.loads {
            if l.profile.len() != h {
                return Err(GridError::schema(
                    "loads",
                    &l.tract_id,
                    "profile",
                    format!("has {} hours, expected {h}", l.profile.len()),
                ));
            }
            if let Some(v) = l.profile.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                return Err(GridError::schema("loads", &l.tract_id, "profile", format!("invalid value {v}")));
            }
        }
        for g in &self.generators {
            if let Err((field, msg)) = g.check() {
                return Err(GridError::schema("generators", &g.id, field, msg));
            }
        }
        Ok(())
    }
}

/// Paths of the four ingestion sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub lines: std::path::PathBuf,
    pub substations: std::path::PathBuf,
    pub generators: std::path::PathBuf,
    pub loads: std::path::PathBuf,
}

impl DatasetPaths {
    /// Conventional file names inside one directory.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        Self {
            lines: d.join("lines.geojson"),
            substations: d.join("substations.csv"),
            generators: d.join("generators.csv"),
            loads: d.join("loads.csv"),
        }
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| GridError::io(path, e))
}

/// Reads and validates all four sources.
pub fn load_dataset(paths: &DatasetPaths) -> Result<GeoDataset> {
    let ds = GeoDataset {
        lines: parse_lines_geojson(&read_to_string(&paths.lines)?, &paths.lines.display().to_string())?,
        substations: parse_substations_csv(
            &read_to_string(&paths.substations)?,
            &paths.substations.display().to_string(),
        )?,
        generators: parse_generators_csv(
            &read_to_string(&paths.generators)?,
            &paths.generators.display().to_string(),
        )?,
        loads: parse_loads_csv(&read_to_string(&paths.loads)?, &paths.loads.display().to_string())?,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes all four sources in the ingestion formats.
pub fn write_dataset(ds: &GeoDataset, paths: &DatasetPaths) -> Result<()> {
    let write = |p: &Path, s: String| std::fs::write(p, s).map_err(|e| GridError::io(p, e));
    write(&paths.lines, lines_to_geojson(&ds.lines))?;
    write(&paths.substations, substations_to_csv(&ds.substations))?;
    write(&paths.generators, generators_to_csv(&ds.generators))?;
    write(&paths.loads, loads_to_csv(&ds.loads))?;
    Ok(())
}

#[derive(Deserialize)]
struct RawCollection {
    #[serde(rename = "type")]
    kind: String,
    features: Vec<RawFeature>,
}

#[derive(Deserialize)]
struct RawFeature {
    geometry: RawGeometry,
    #[serde(default)]
    properties: serde_json::Map<String, serde_json::Value>,
}

#[derive(Deserialize)]
struct RawGeometry {
    #[serde(rename = "type")]
    kind: String,
    coordinates: Vec<Vec<f64>>,
}

fn json_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

pub fn parse_lines_geojson(text: &str, file: &str) -> Result<Vec<LinePath>> {
    let raw: RawCollection = serde_json::from_str(text)
        .map_err(|e| GridError::schema(file, format!("line {}", e.line()), "document", e))?;
    if raw.kind != "FeatureCollection" {
        return Err(GridError::schema(file, "root", "type", "expected FeatureCollection"));
    }
    let mut out = Vec::with_capacity(raw.features.len());
    for (i, f) in raw.features.into_iter().enumerate() {
        let id = f
            .properties
            .get("id")
            .and_then(json_string)
            .ok_or_else(|| GridError::schema(file, format!("feature {i}"), "id", "missing"))?;
        if f.geometry.kind != "LineString" {
            return Err(GridError::schema(file, &id, "geometry", format!("unsupported {}", f.geometry.kind)));
        }
        let kv = f
            .properties
            .get("kv")
            .and_then(|v| v.as_f64().or_else(|| v.as_str().and_then(|s| s.parse().ok())))
            .ok_or_else(|| GridError::schema(file, &id, "kv", "missing or not numeric"))?;
        let mut points = Vec::with_capacity(f.geometry.coordinates.len());
        for c in &f.geometry.coordinates {
            if c.len() < 2 {
                return Err(GridError::schema(file, &id, "coordinates", "position needs lon and lat"));
            }
            points.push(GeoPoint::new(c[1], c[0]).map_err(|e| GridError::schema(file, &id, "coordinates", e))?);
        }
        let owner = f.properties.get("owner").and_then(json_string);
        let name = f.properties.get("name").and_then(json_string);
        out.push(LinePath::new(id.clone(), points, kv, owner, name).map_err(|e| GridError::schema(file, &id, "geometry", e))?);
    }
    Ok(out)
}

pub fn lines_to_geojson(lines: &[LinePath]) -> String {
    let features: Vec<serde_json::Value> = lines
        .iter()
        .map(|l| {
            let mut props = serde_json::Map::new();
            props.insert("id".into(), l.id.clone().into());
            props.insert("kv".into(), l.voltage_kv.into());
            if let Some(o) = &l.owner {
                props.insert("owner".into(), o.clone().into());
            }
            if let Some(n) = &l.name {
                props.insert("name".into(), n.clone().into());
            }
            serde_json::json!({
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": l.points.iter().map(|p| vec![p.lon, p.lat]).collect::<Vec<_>>(),
                },
                "properties": props,
            })
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({ "type": "FeatureCollection", "features": features }))
        .expect("geojson serializes")
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes())
}

fn header_index(headers: &csv::StringRecord, file: &str, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(name))
        .ok_or_else(|| GridError::schema(file, "header", name, "missing column"))
}

struct Row<'a> {
    file: &'a str,
    rec: csv::StringRecord,
    label: String,
}

impl Row<'_> {
    fn str(&self, idx: usize, field: &str) -> Result<&str> {
        self.rec
            .get(idx)
            .ok_or_else(|| GridError::schema(self.file, &self.label, field, "missing value"))
    }

    fn opt(&self, idx: Option<usize>) -> Option<String> {
        idx.and_then(|i| self.rec.get(i)).filter(|s| !s.is_empty()).map(str::to_string)
    }

    fn num(&self, idx: usize, field: &str) -> Result<f64> {
        let s = self.str(idx, field)?;
        let v: f64 = s
            .parse()
            .map_err(|_| GridError::schema(self.file, &self.label, field, format!("`{s}` is not a number")))?;
        if !v.is_finite() {
            return Err(GridError::schema(self.file, &self.label, field, "not finite"));
        }
        Ok(v)
    }

    fn point(&self, lat: usize, lon: usize) -> Result<GeoPoint> {
        let (la, lo) = (self.num(lat, "lat")?, self.num(lon, "lon")?);
        GeoPoint::new(la, lo).map_err(|e| {
            let field = if (-90.0..=90.0).contains(&la) { "lon" } else { "lat" };
            GridError::schema(self.file, &self.label, field, e)
        })
    }
}

fn rows<'a>(text: &'a str, file: &'a str) -> Result<(csv::StringRecord, Vec<Row<'a>>)> {
    let mut rdr = csv_reader(text);
    let headers = rdr.headers().map_err(|e| GridError::schema(file, "header", "header", e))?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            GridError::schema(file, format!("line {line}"), "record", e)
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(0).unwrap_or("").to_string();
        out.push(Row { file, rec, label: format!("line {line} ({id})") });
    }
    Ok((headers, out))
}

pub fn parse_substations_csv(text: &str, file: &str) -> Result<Vec<SubstationRecord>> {
    let (h, rows) = rows(text, file)?;
    let (id, lat, lon) = (header_index(&h, file, "id")?, header_index(&h, file, "lat")?, header_index(&h, file, "lon")?);
    let name = header_index(&h, file, "name").ok();
    rows.iter()
        .map(|r| {
            Ok(SubstationRecord { id: r.str(id, "id")?.to_string(), location: r.point(lat, lon)?, name: r.opt(name) })
        })
        .collect()
}

pub fn parse_generators_csv(text: &str, file: &str) -> Result<Vec<GeneratorRecord>> {
    let (h, rows) = rows(text, file)?;
    let idx = |n: &str| header_index(&h, file, n);
    let (id, lat, lon, fuel, pmax, pmin, pf) =
        (idx("id")?, idx("lat")?, idx("lon")?, idx("fuel")?, idx("pmax_mw")?, idx("pmin_mw")?, idx("pf")?);
    let (plant, unit) = (idx("plant_code").ok(), idx("unit_id").ok());
    rows.iter()
        .map(|r| {
            let fuel_s = r.str(fuel, "fuel")?;
            let g = GeneratorRecord {
                id: r.str(id, "id")?.to_string(),
                location: r.point(lat, lon)?,
                fuel_type: fuel_s.parse().map_err(|e| GridError::schema(file, &r.label, "fuel", e))?,
                pmax_mw: r.num(pmax, "pmax_mw")?,
                pmin_mw: r.num(pmin, "pmin_mw")?,
                power_factor: r.num(pf, "pf")?,
                plant_code: r.opt(plant),
                unit_id: r.opt(unit),
            };
            g.check().map_err(|(field, msg)| GridError::schema(file, &r.label, field, msg))?;
            Ok(g)
        })
        .collect()
}

pub fn parse_loads_csv(text: &str, file: &str) -> Result<Vec<LoadRecord>> {
    let (h, rows) = rows(text, file)?;
    let (id, lat, lon) =
        (header_index(&h, file, "tract_id")?, header_index(&h, file, "lat")?, header_index(&h, file, "lon")?);
    let hour_cols: Vec<usize> = (0..)
        .map_while(|k| h.iter().position(|c| c == format!("h{k}")))
        .collect();
    rows.iter()
        .map(|r| {
            if r.rec.len() != h.len() {
                return Err(GridError::schema(file, &r.label, "profile", format!("{} fields, header has {}", r.rec.len(), h.len())));
            }
            let profile = hour_cols
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let v = r.num(c, &format!("h{k}"))?;
                    if v < 0.0 {
                        return Err(GridError::schema(file, &r.label, &format!("h{k}"), "negative load"));
                    }
                    Ok(v)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(LoadRecord { tract_id: r.str(id, "tract_id")?.to_string(), location: r.point(lat, lon)?, profile })
        })
        .collect()
}

fn opt_str(s: &Option<String>) -> &str {
    s.as_deref().unwrap_or("")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn substations_to_csv(subs: &[SubstationRecord]) -> String {
    let mut out = String::from("id,lat,lon,name\n");
    for s in subs {
        out += &format!("{},{},{},{}\n", csv_field(&s.id), s.location.lat, s.location.lon, csv_field(opt_str(&s.name)));
    }
    out
}

pub fn generators_to_csv(gens: &[GeneratorRecord]) -> String {
    let mut out = String::from("id,lat,lon,fuel,pmax_mw,pmin_mw,pf,plant_code,unit_id\n");
    for g in gens {
        out += &format!(
            "{},{},{},{},{},{},{},{},{}\n",
            csv_field(&g.id),
            g.location.lat,
            g.location.lon,
            g.fuel_type,
            g.pmax_mw,
            g.pmin_mw,
            g.power_factor,
            csv_field(opt_str(&g.plant_code)),
            csv_field(opt_str(&g.unit_id))
        );
    }
    out
}

pub fn loads_to_csv(loads: &[LoadRecord]) -> String {
    let h = loads.first().map_or(0, |l| l.profile.len());
    let mut out = String::from("tract_id,lat,lon");
    for k in 0..h {
        out += &format!(",h{k}");
    }
    out.push('\n');
    for l in loads {
        out += &format!("{},{},{}", csv_field(&l.tract_id), l.location.lat, l.location.lon);
        for v in &l.profile {
            out += &format!(",{v}");
        }
        out.push('\n');
    }
    out
}

/// Uniform lat/lon grid for radius queries over a growing point set.
#[derive(Debug, Clone)]
pub struct PointIndex {
    cell_deg: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    points: Vec<GeoPoint>,
}

const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

impl PointIndex {
    /// `cell_m` should be on the order of the typical query radius.
    pub fn new(cell_m: f64) -> Self {
        Self { cell_deg: (cell_m / METERS_PER_DEGREE).max(1e-7), cells: HashMap::new(), points: Vec::new() }
    }

    pub fn from_points(cell_m: f64, points: impl IntoIterator<Item = GeoPoint>) -> Self {
        let mut idx = Self::new(cell_m);
        for p in points {
            idx.insert(p);
        }
        idx
    }

    fn key(&self, p: GeoPoint) -> (i64, i64) {
        ((p.lat / self.cell_deg).floor() as i64, (p.lon / self.cell_deg).floor() as i64)
    }

    pub fn insert(&mut self, p: GeoPoint) -> usize {
        let i = self.points.len();
        self.points.push(p);
        self.cells.entry(self.key(p)).or_default().push(i);
        i
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> GeoPoint {
        self.points[i]
    }

    /// Points within `radius_m`, sorted by (distance, insertion index).
    pub fn within(&self, p: GeoPoint, radius_m: f64) -> Vec<(usize, f64)> {
        let dlat = radius_m / METERS_PER_DEGREE * 1.01 + 1e-12;
        let dlon = dlat / p.lat.to_radians().cos().max(1e-6);
        let lat_cells = (2.0 * dlat / self.cell_deg).ceil() + 2.0;
        let lon_cells = (2.0 * dlon / self.cell_deg).ceil() + 2.0;
        let mut hits: Vec<(usize, f64)> = if lat_cells * lon_cells > 4.0 * self.points.len() as f64 + 16.0
            || p.lon - dlon < -180.0
            || p.lon + dlon > 180.0
        {
            self.points
                .iter()
                .enumerate()
                .map(|(i, &q)| (i, geo_distance(p, q)))
                .filter(|&(_, d)| d <= radius_m)
                .collect()
        } else {
            let (a0, o0) = self.key(GeoPoint { lat: p.lat - dlat, lon: p.lon - dlon });
            let (a1, o1) = self.key(GeoPoint { lat: p.lat + dlat, lon: p.lon + dlon });
            let mut v = Vec::new();
            for a in a0..=a1 {
                for o in o0..=o1 {
                    if let Some(ids) = self.cells.get(&(a, o)) {
                        for &i in ids {
                            let d = geo_distance(p, self.points[i]);
                            if d <= radius_m {
                                v.push((i, d));
                            }
                        }
                    }
                }
            }
            v
        };
        hits.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
        hits
    }

    /// Closest point within `radius_m`; ties go to the lowest index.
    pub fn nearest_within(&self, p: GeoPoint, radius_m: f64) -> Option<(usize, f64)> {
        self.within(p, radius_m).into_iter().next()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    /// Spherical law of cosines, independent of the haversine path.
    fn cosine_law(a: GeoPoint, b: GeoPoint) -> f64 {
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dl = (b.lon - a.lon).to_radians();
        let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).clamp(-1.0, 1.0);
        EARTH_RADIUS_M * c.acos()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(geo_distance(pt(0.0, 0.0), pt(0.0, 0.0)), 0.0);
        let d = geo_distance(pt(0.0, 0.0), pt(0.0, 1.0));
        let oracle = cosine_law(pt(0.0, 0.0), pt(0.0, 1.0));
        assert!((d - oracle).abs() / oracle < 1e-9);
        assert!((d - 111_195.0).abs() / 111_195.0 < 1e-3);
    }

    #[test]
    fn path_length_examples() {
        let line = LinePath::new("a", vec![pt(0.0, 0.0), pt(0.0, 1.0)], 230.0, None, None).unwrap();
        let expected = cosine_law(pt(0.0, 0.0), pt(0.0, 1.0)) / 1609.344;
        assert!((path_length(&line) - expected).abs() < 1e-9);
        assert!((path_length(&line) - 69.09).abs() < 0.01);

        let mid = interpolate(pt(0.0, 0.0), pt(0.0, 1.0), 0.5);
        let split = LinePath::new("b", vec![pt(0.0, 0.0), mid, pt(0.0, 1.0)], 230.0, None, None).unwrap();
        assert!((path_length(&split) - path_length(&line)).abs() / path_length(&line) < 1e-9);

        let corner = pt(0.0, 1.0);
        let right = LinePath::new("c", vec![pt(0.0, 0.0), corner, pt(1.0, 1.0)], 230.0, None, None).unwrap();
        let legs = (cosine_law(pt(0.0, 0.0), corner) + cosine_law(corner, pt(1.0, 1.0))) / 1609.344;
        assert!((path_length(&right) - legs).abs() / legs < 1e-9);
    }

    #[test]
    fn line_path_rejects_degenerate() {
        assert!(LinePath::new("x", vec![pt(1.0, 1.0), pt(1.0, 1.0)], 115.0, None, None).is_err());
        let l = LinePath::new("y", vec![pt(1.0, 1.0), pt(1.0, 1.0), pt(1.0, 2.0)], 115.0, None, None).unwrap();
        assert_eq!(l.points.len(), 2);
        assert!(LinePath::new("z", vec![pt(1.0, 1.0), pt(1.0, 2.0)], 0.0, None, None).is_err());
    }

    #[test]
    fn out_of_range_coordinates_rejected() {
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -181.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn lat_91_names_the_record() {
        let text = "id,lat,lon,name\nS1,35.0,-119.0,a\nS2,91,-119.0,b\n";
        let err = parse_substations_csv(text, "subs.csv").unwrap_err().to_string();
        assert!(err.contains("S2") && err.contains("lat") && err.contains("subs.csv"), "{err}");
    }

    #[test]
    fn duplicate_substation_rejected() {
        let ds = GeoDataset {
            substations: vec![
                SubstationRecord { id: "A".into(), location: pt(1.0, 1.0), name: None },
                SubstationRecord { id: "A".into(), location: pt(2.0, 1.0), name: None },
            ],
            ..Default::default()
        };
        assert!(matches!(ds.validate(), Err(GridError::Schema { .. })));
    }

    #[test]
    fn fuel_parsing_accepts_eia_names() {
        assert_eq!("Natural Gas Steam Turbine".parse::<FuelType>().unwrap(), FuelType::NgSteamTurbine);
        assert_eq!("Municipal Solid Waste".parse::<FuelType>().unwrap(), FuelType::MunicipalSolidWaste);
        assert_eq!("Other Natural Gas".parse::<FuelType>().unwrap().cost_alias(), FuelType::NgSteamTurbine);
        for f in FuelType::ALL {
            assert_eq!(f.as_str().parse::<FuelType>().unwrap(), f);
        }
        assert!("coal-ish".parse::<FuelType>().is_err());
    }

    #[test]
    fn index_matches_brute_force() {
        let base = pt(35.0, -119.0);
        let pts: Vec<GeoPoint> =
            (0..200).map(|i| interpolate(base, pt(35.01, -118.98), (i as f64 * 0.37) % 1.0)).collect();
        let idx = PointIndex::from_points(12.0, pts.iter().copied());
        for r in [5.0, 12.0, 100.0, 5000.0] {
            let q = pt(35.005, -118.99);
            let got: Vec<usize> = idx.within(q, r).into_iter().map(|x| x.0).collect();
            let mut want: Vec<(usize, f64)> =
                pts.iter().enumerate().map(|(i, &p)| (i, geo_distance(q, p))).filter(|x| x.1 <= r).collect();
            want.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            assert_eq!(got, want.into_iter().map(|x| x.0).collect::<Vec<_>>());
        }
    }
}
