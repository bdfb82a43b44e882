//! CSV readers and writers for every inter-layer file.
//!
//! Headers are compared field by field after trimming surrounding whitespace,
//! so `t, Antenna ID, Event Code, Device ID` and `t,Antenna ID,Event Code,Device ID`
//! are the same header. Numbers are written in their shortest round-trip
//! decimal form with `.` as decimal separator.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Cursor, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};

use crate::aggregation::{CountDraw, CountDraws, OdDraw, OdDraws};
use crate::datamodel::{
    AntennaCells, DuplicityTable, Event, EventLog, Grid, JointEntry, JointPosterior,
    PenetrationRate, PosteriorEntry, PosteriorLocation, Polygon, RegionPartition,
    RegisterPopulation, SignalDominance, TimeAxis,
};
use crate::error::{Error, Result};
use crate::inference::{
    OdPopulationDraw, PopulationDraw, PopulationDraws, RegionTimeDraw, StatsTable, Summary,
};

/// Tolerance on per-time probability sums when reading posterior files.
pub const READ_SUM_TOL: f64 = 1e-6;

/// Name and ordered column list of a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub name: &'static str,
    pub columns: Vec<String>,
}

impl CsvSchema {
    pub fn new(name: &'static str, columns: &[&str]) -> Self {
        CsvSchema {
            name,
            columns: columns.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn header_line(&self) -> String {
        self.columns.join(",")
    }

    fn check(&self, path: &Path, found: &StringRecord) -> Result<()> {
        let found: Vec<&str> = found.iter().map(str::trim).collect();
        if found != self.columns.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Header {
                path: path.to_path_buf(),
                expected: self.header_line(),
                found: found.join(","),
            });
        }
        Ok(())
    }
}

pub mod schema {
    use super::CsvSchema;

    pub const STATS_COLUMNS: [&str; 12] = [
        "Mean", "Mode", "Median", "Min", "Max", "Q1", "Q3", "IQR", "SD", "CV", "CI_LOW", "CI_HIGH",
    ];

    pub fn events() -> CsvSchema {
        CsvSchema::new("events", &["t", "Antenna ID", "Event Code", "Device ID"])
    }
    pub fn grid() -> CsvSchema {
        CsvSchema::new(
            "grid",
            &["Origin X", "Origin Y", "X Tile Dim", "Y Tile Dim", "No Tiles X", "No Tiles Y"],
        )
    }
    pub fn signal(n_tiles: usize) -> CsvSchema {
        let mut cols = vec!["Antenna ID".to_string()];
        cols.extend((0..n_tiles).map(|k| format!("Tile{k}")));
        CsvSchema {
            name: "signal",
            columns: cols,
        }
    }
    pub fn posterior() -> CsvSchema {
        CsvSchema::new("posterior", &["time", "tile", "probL"])
    }
    pub fn joint() -> CsvSchema {
        CsvSchema::new("joint", &["time_from", "time_to", "tile_from", "tile_to", "probL"])
    }
    pub fn duplicity() -> CsvSchema {
        CsvSchema::new("duplicity", &["deviceID", "dupP"])
    }
    pub fn register() -> CsvSchema {
        CsvSchema::new("register", &["region", "NO"])
    }
    pub fn penetration_rate() -> CsvSchema {
        CsvSchema::new("penetration_rate", &["region", "pntRate"])
    }
    pub fn regions() -> CsvSchema {
        CsvSchema::new("regions", &["tile", "region"])
    }
    pub fn antenna_cells() -> CsvSchema {
        CsvSchema::new("antenna_cells", &["AntennaId", "Cell Coordinates"])
    }
    pub fn count_draws() -> CsvSchema {
        CsvSchema::new("count_draws", &["time", "region", "N", "iter"])
    }
    pub fn od_draws() -> CsvSchema {
        CsvSchema::new(
            "od_draws",
            &["time_from", "time_to", "region_from", "region_to", "Nnet", "iter"],
        )
    }
    pub fn population_draws() -> CsvSchema {
        CsvSchema::new("population_draws", &["region", "N", "NPop"])
    }
    pub fn population_t_draws() -> CsvSchema {
        CsvSchema::new("population_t_draws", &["time", "region", "iter", "NPop"])
    }
    pub fn population_od_draws() -> CsvSchema {
        CsvSchema::new(
            "population_od_draws",
            &["time_from", "time_to", "region_from", "region_to", "iter", "NPop"],
        )
    }
    pub fn stats(keys: &[&str]) -> CsvSchema {
        let mut cols: Vec<&str> = keys.to_vec();
        cols.extend(STATS_COLUMNS);
        CsvSchema::new("stats", &cols)
    }
}

// ---------------------------------------------------------------------------
// plumbing

fn open_input(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let is_zip = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("zip"));
    if !is_zip {
        return Ok(Box::new(std::io::BufReader::new(file)));
    }
    let bad = |m: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: m,
    };
    let mut archive = zip::ZipArchive::new(file).map_err(|e| bad(format!("bad zip archive: {e}")))?;
    let index = (0..archive.len())
        .find(|&i| {
            archive
                .by_index(i)
                .map(|f| f.is_file() && f.name().is_ok_and(|n| n.to_ascii_lowercase().ends_with(".csv")))
                .unwrap_or(false)
        })
        .ok_or_else(|| bad("zip archive holds no .csv entry".into()))?;
    let mut buf = Vec::new();
    archive
        .by_index(index)
        .map_err(|e| bad(format!("bad zip entry: {e}")))?
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    Ok(Box::new(Cursor::new(buf)))
}

struct Table {
    path: PathBuf,
    reader: csv::Reader<Box<dyn Read>>,
}

impl Table {
    fn open(path: &Path, schema: &CsvSchema) -> Result<Self> {
        let mut reader = ReaderBuilder::new()
            .trim(Trim::All)
            .has_headers(true)
            .from_reader(open_input(path)?);
        let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
        schema.check(path, &headers)?;
        Ok(Table {
            path: path.to_path_buf(),
            reader,
        })
    }

    fn for_each(mut self, mut f: impl FnMut(&Row<'_>) -> Result<()>) -> Result<()> {
        let mut rec = StringRecord::new();
        loop {
            match self.reader.read_record(&mut rec) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = rec.position().map_or(0, |p| p.line());
                    f(&Row {
                        path: &self.path,
                        line,
                        rec: &rec,
                    })?;
                }
                Err(e) => return Err(csv_err(&self.path, e)),
            }
        }
    }
}

struct Row<'a> {
    path: &'a Path,
    line: u64,
    rec: &'a StringRecord,
}

impl Row<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.into(),
        }
    }

    fn str(&self, idx: usize) -> Result<&str> {
        self.rec
            .get(idx)
            .ok_or_else(|| self.err(format!("missing column {}", idx + 1)))
    }

    fn parse<T: FromStr>(&self, idx: usize, what: &str) -> Result<T> {
        let s = self.str(idx)?;
        s.parse()
            .map_err(|_| self.err(format!("cannot parse {what} from `{s}`")))
    }

    fn prob(&self, idx: usize, what: &str) -> Result<f64> {
        let p: f64 = self.parse(idx, what)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(self.err(format!("{what} = {p} outside [0, 1]")));
        }
        Ok(p)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

struct Out {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl Out {
    fn create(path: &Path, schema: &CsvSchema) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = Out {
            path: path.to_path_buf(),
            writer: WriterBuilder::new().from_writer(BufWriter::new(file)),
        };
        out.row(schema.columns.iter().map(String::as_str))?;
        Ok(out)
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer
            .write_record(fields)
            .map_err(|e| csv_err(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn num(x: f64) -> String {
    if x == 0.0 {
        // no "-0"
        return "0".into();
    }
    format!("{x}")
}

// ---------------------------------------------------------------------------
// events, grid, signal, simulation parameters

pub fn read_events(path: impl AsRef<Path>) -> Result<EventLog> {
    let path = path.as_ref();
    let mut events = Vec::new();
    Table::open(path, &schema::events())?.for_each(|row| {
        events.push(Event {
            t: row.parse(0, "t")?,
            antenna_id: row.str(1)?.to_string(),
            event_code: row.parse(2, "Event Code")?,
            device_id: row.str(3)?.to_string(),
        });
        Ok(())
    })?;
    EventLog::new(events).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

pub fn write_events(path: impl AsRef<Path>, log: &EventLog) -> Result<()> {
    let mut out = Out::create(path.as_ref(), &schema::events())?;
    let mut sorted: Vec<&Event> = log.events().iter().collect();
    sorted.sort_by(|a, b| (a.t, &a.device_id).cmp(&(b.t, &b.device_id)));
    for e in sorted {
        out.row([
            e.t.to_string(),
            e.antenna_id.clone(),
            e.event_code.to_string(),
            e.device_id.clone(),
        ])?;
    }
    out.finish()
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let mut grid = None;
    Table::open(path, &schema::grid())?.for_each(|row| {
        if grid.is_some() {
            return Err(row.err("grid file must hold exactly one data row"));
        }
        let g = Grid::new(
            row.parse(4, "No Tiles X")?,
            row.parse(5, "No Tiles Y")?,
            row.parse(2, "X Tile Dim")?,
            row.parse(3, "Y Tile Dim")?,
            row.parse(0, "Origin X")?,
            row.parse(1, "Origin Y")?,
        )
        .map_err(|e| row.err(e.to_string()))?;
        grid = Some(g);
        Ok(())
    })?;
    grid.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "grid file has no data row".into(),
    })
}

pub fn write_grid(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    let mut out = Out::create(path.as_ref(), &schema::grid())?;
    out.row([
        num(grid.origin_x),
        num(grid.origin_y),
        num(grid.tile_size_x),
        num(grid.tile_size_y),
        grid.n_tiles_x.to_string(),
        grid.n_tiles_y.to_string(),
    ])?;
    out.finish()
}

pub fn read_signal(path: impl AsRef<Path>, grid: &Grid) -> Result<SignalDominance> {
    let path = path.as_ref();
    let n = grid.n_tiles();
    let mut reader = ReaderBuilder::new()
        .trim(Trim::All)
        .from_reader(open_input(path)?);
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.len() != n + 1 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "signal file has {} tile columns but the grid has {n} tiles",
                headers.len().saturating_sub(1)
            ),
        });
    }
    schema::signal(n).check(path, &headers)?;
    let table = Table {
        path: path.to_path_buf(),
        reader,
    };
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    table.for_each(|row| {
        if row.rec.len() != n + 1 {
            return Err(row.err(format!(
                "expected {} fields, found {}",
                n + 1,
                row.rec.len()
            )));
        }
        ids.push(row.str(0)?.to_string());
        let vals = (1..=n)
            .map(|k| row.parse::<f64>(k, "signal value"))
            .collect::<Result<Vec<_>>>()?;
        rows.push(vals);
        Ok(())
    })?;
    SignalDominance::new(ids, rows, n).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

pub fn write_signal(path: impl AsRef<Path>, signal: &SignalDominance) -> Result<()> {
    let mut out = Out::create(path.as_ref(), &schema::signal(signal.n_tiles()))?;
    for (id, row) in signal.antennas().iter().zip(signal.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| num(*v)));
        out.row(rec)?;
    }
    out.finish()
}

fn xml_field(path: &Path, text: &str, tag: &str) -> Result<i64> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open).map(|i| i + open.len());
    let end = start.and_then(|s| text[s..].find(&close).map(|e| s + e));
    let (Some(s), Some(e)) = (start, end) else {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("missing <{tag}> element"),
        });
    };
    text[s..e].trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: format!("<{tag}> is not an integer: `{}`", text[s..e].trim()),
    })
}

/// Reads `start_time`, `end_time` and `time_increment` from a simulation parameter file.
pub fn read_simulation_params(path: impl AsRef<Path>) -> Result<TimeAxis> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TimeAxis::new(
        xml_field(path, &text, "start_time")?,
        xml_field(path, &text, "end_time")?,
        xml_field(path, &text, "time_increment")?,
    )
}

pub fn write_simulation_params(path: impl AsRef<Path>, axis: &TimeAxis) -> Result<()> {
    let path = path.as_ref();
    let text = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<simulation>\n  <start_time>{}</start_time>\n  <end_time>{}</end_time>\n  <time_increment>{}</time_increment>\n</simulation>\n",
        axis.start, axis.end, axis.increment
    );
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// per-device posterior files

pub fn device_file(dir: impl AsRef<Path>, prefix: &str, device: &str) -> PathBuf {
    dir.as_ref().join(format!("{prefix}_{device}.csv"))
}

/// Device ids with a `{prefix}_{device}.csv` file in `dir`, sorted.
pub fn list_device_files(dir: impl AsRef<Path>, prefix: &str) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    let head = format!("{prefix}_");
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(dev) = name.strip_prefix(&head).and_then(|n| n.strip_suffix(".csv")) {
            out.push(dev.to_string());
        }
    }
    out.sort();
    Ok(out)
}

pub fn write_posterior(path: impl AsRef<Path>, post: &PosteriorLocation) -> Result<()> {
    let mut out = Out::create(path.as_ref(), &schema::posterior())?;
    for e in post.entries.iter().filter(|e| e.prob > 0.0) {
        out.row([e.time.to_string(), e.tile.to_string(), num(e.prob)])?;
    }
    out.finish()
}

pub fn read_posterior(path: impl AsRef<Path>, device_id: &str) -> Result<PosteriorLocation> {
    let path = path.as_ref();
    let mut entries = Vec::new();
    Table::open(path, &schema::posterior())?.for_each(|row| {
        entries.push(PosteriorEntry {
            time: row.parse(0, "time")?,
            tile: row.parse(1, "tile")?,
            prob: row.prob(2, "probL")?,
        });
        Ok(())
    })?;
    let post = PosteriorLocation::new(device_id, entries);
    post.validate(READ_SUM_TOL).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok(post)
}

pub fn write_joint(path: impl AsRef<Path>, joint: &JointPosterior) -> Result<()> {
    let mut out = Out::create(path.as_ref(), &schema::joint())?;
    for e in joint.entries.iter().filter(|e| e.prob > 0.0) {
        out.row([
            e.time_from.to_string(),
            e.time_to.to_string(),
            e.tile_from.to_string(),
            e.tile_to.to_string(),
            num(e.prob),
        ])?;
    }
    out.finish()
}

/// Reads a joint file; every row must link consecutive instants `t -> t + increment`.
pub fn read_joint(path: impl AsRef<Path>, device_id: &str, increment: i64) -> Result<JointPosterior> {
    let path = path.as_ref();
    let mut entries = Vec::new();
    Table::open(path, &schema::joint())?.for_each(|row| {
        let e = JointEntry {
            time_from: row.parse(0, "time_from")?,
            time_to: row.parse(1, "time_to")?,
            tile_from: row.parse(2, "tile_from")?,
            tile_to: row.parse(3, "tile_to")?,
            prob: row.prob(4, "probL")?,
        };
        if e.time_to != e.time_from + increment {
            return Err(row.err(format!(
                "time_to {} is not the successor of time_from {} (step {increment})",
                e.time_to, e.time_from
            )));
        }
        entries.push(e);
        Ok(())
    })?;
    let joint = JointPosterior::new(device_id, entries);
    joint.validate(increment, READ_SUM_TOL).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok(joint)
}

pub fn read_posteriors(dir: impl AsRef<Path>, prefix: &str) -> Result<Vec<PosteriorLocation>> {
    let dir = dir.as_ref();
    list_device_files(dir, prefix)?
        .iter()
        .map(|d| read_posterior(device_file(dir, prefix, d), d))
        .collect()
}

pub fn read_joints(dir: impl AsRef<Path>, prefix: &str, increment: i64) -> Result<Vec<JointPosterior>> {
    let dir = dir.as_ref();
    list_device_files(dir, prefix)?
        .iter()
        .map(|d| read_joint(device_file(dir, prefix, d), d, increment))
        .collect()
}

// ---------------------------------------------------------------------------
// duplicity, register, penetration rate, regions, antenna cells

pub fn write_duplicity(path: impl AsRef<Path>, table: &DuplicityTable) -> Result<()> {
    let mut out = Out::create(path.as_ref(), &schema::duplicity())?;
    for (d, p) in table.rows() {
        out.row([d.clone(), num(*p)])?;
    }
    out.finish()
}

pub fn read_duplicity(path: impl AsRef<Path>) -> Result<DuplicityTable> {
    let path = path.as_ref();
    let mut rows = BTreeMap::new();
    Table::open(path, &schema::duplicity())?.for_each(|row| {
        let d = row.str(0)?.to_string();
        let p = row.prob(1, "dupP")?;
        if rows.insert(d.clone(), p).is_some() {
            return Err(row.err(format!("device {d} listed twice")));
        }
        Ok(())
    })?;
    DuplicityTable::new(rows)
}

fn read_region_map<T: FromStr>(path: &Path, schema: &CsvSchema, what: &str) -> Result<BTreeMap<u32, T>> {
    let mut out = BTreeMap::new();
    Table::open(path, schema)?.for_each(|row| {
        let r: u32 = row.parse(0, "region")?;
        let v: T = row.parse(1, what)?;
        if out.insert(r, v).is_some() {
            return Err(row.err(format!("region {r} listed twice")));
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn read_register(path: impl AsRef<Path>) -> Result<RegisterPopulation> {
    Ok(RegisterPopulation {
        counts: read_region_map(path.as_ref(), &schema::register(), "NO")?,
    })
}

pub fn write_register(path: impl AsRef<Path>, reg: &RegisterPopulation) -> Result<()> {
    let mut out = Out::create(path.as_ref(), &schema::register())?;
    for (r, n) in &reg.counts {
        out.row([r.to_string(), n.to_string()])?;
    }
    out.finish()
}

pub fn read_penetration_rate(path: impl AsRef<Path>) -> Result<PenetrationRate> {
    let path = path.as_ref();
    PenetrationRate::new(read_region_map(path, &schema::penetration_rate(), "pntRate")?).map_err(
        |e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        },
    )
}

pub fn write_penetration_rate(path: impl AsRef<Path>, rate: &PenetrationRate) -> Result<()> {
    let mut out = Out::create(path.as_ref(), &schema::penetration_rate())?;
    for (r, v) in &rate.rates {
        out.row([r.to_string(), num(*v)])?;
    }
    out.finish()
}

pub fn read_regions(path: impl AsRef<Path>, grid: &Grid) -> Result<RegionPartition> {
    let path = path.as_ref();
    let n = grid.n_tiles();
    let mut region_of: Vec<Option<u32>> = vec![None; n];
    Table::open(path, &schema::regions())?.for_each(|row| {
        let tile: usize = row.parse(0, "tile")?;
        let region: u32 = row.parse(1, "region")?;
        let slot = region_of
            .get_mut(tile)
            .ok_or_else(|| row.err(format!("tile {tile} outside a grid of {n} tiles")))?;
        if slot.replace(region).is_some() {
            return Err(row.err(format!("tile {tile} assigned twice")));
        }
        Ok(())
    })?;
    let missing = region_of.iter().filter(|r| r.is_none()).count();
    if missing > 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("region file leaves {missing} of {n} tiles unassigned"),
        });
    }
    RegionPartition::new(region_of.into_iter().map(Option::unwrap).collect()).map_err(|e| {
        Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        }
    })
}

pub fn write_regions(path: impl AsRef<Path>, regions: &RegionPartition) -> Result<()> {
    let mut out = Out::create(path.as_ref(), &schema::regions())?;
    for (tile, r) in regions.regions().iter().enumerate() {
        out.row([tile.to_string(), r.to_string()])?;
    }
    out.finish()
}

pub fn read_antenna_cells(path: impl AsRef<Path>) -> Result<AntennaCells> {
    let path = path.as_ref();
    let mut cells = BTreeMap::new();
    Table::open(path, &schema::antenna_cells())?.for_each(|row| {
        let id = row.str(0)?.to_string();
        let poly = Polygon::from_wkt(row.str(1)?).map_err(|e| row.err(e.to_string()))?;
        if cells.insert(id.clone(), poly).is_some() {
            return Err(row.err(format!("antenna {id} listed twice")));
        }
        Ok(())
    })?;
    Ok(AntennaCells::new(cells))
}

pub fn write_antenna_cells(path: impl AsRef<Path>, cells: &AntennaCells) -> Result<()> {
    let mut out = Out::create(path.as_ref(), &schema::antenna_cells())?;
    for (id, poly) in &cells.cells {
        out.row([id.clone(), poly.to_wkt()])?;
    }
    out.finish()
}

// ---------------------------------------------------------------------------
// aggregation draws

pub fn write_count_draws(path: impl AsRef<Path>, draws: &CountDraws) -> Result<()> {
    let mut out = Out::create(path.as_ref(), &schema::count_draws())?;
    for d in &draws.rows {
        out.row([d.time.to_string(), d.region.to_string(), num(d.n), d.iter.to_string()])?;
    }
    out.finish()
}

/// Reads count draws; a `.zip` path is read through its first `.csv` entry.
pub fn read_count_draws(path: impl AsRef<Path>) -> Result<CountDraws> {
    let mut rows = Vec::new();
    Table::open(path.as_ref(), &schema::count_draws())?.for_each(|row| {
        rows.push(CountDraw {
            time: row.parse(0, "time")?,
            region: row.parse(1, "region")?,
            n: row.parse(2, "N")?,
            iter: row.parse(3, "iter")?,
        });
        Ok(())
    })?;
    Ok(CountDraws { rows })
}

pub fn write_od_draws(path: impl AsRef<Path>, draws: &OdDraws) -> Result<()> {
    let mut out = Out::create(path.as_ref(), &schema::od_draws())?;
    for d in &draws.rows {
        out.row([
            d.time_from.to_string(),
            d.time_to.to_string(),
            d.region_from.to_string(),
            d.region_to.to_string(),
            num(d.n),
            d.iter.to_string(),
        ])?;
    }
    out.finish()
}

pub fn read_od_draws(path: impl AsRef<Path>) -> Result<OdDraws> {
    let mut rows = Vec::new();
    Table::open(path.as_ref(), &schema::od_draws())?.for_each(|row| {
        rows.push(OdDraw {
            time_from: row.parse(0, "time_from")?,
            time_to: row.parse(1, "time_to")?,
            region_from: row.parse(2, "region_from")?,
            region_to: row.parse(3, "region_to")?,
            n: row.parse(4, "Nnet")?,
            iter: row.parse(5, "iter")?,
        });
        Ok(())
    })?;
    Ok(OdDraws { rows })
}

// ---------------------------------------------------------------------------
// inference outputs

/// Writes `region,N,NPop` rows ordered by region, then draw index.
pub fn write_population_draws(path: impl AsRef<Path>, draws: &PopulationDraws) -> Result<()> {
    let mut out = Out::create(path.as_ref(), &schema::population_draws())?;
    let mut rows: Vec<&PopulationDraw> = draws.rows.iter().collect();
    rows.sort_by_key(|d| (d.region, d.iter));
    for d in rows {
        out.row([d.region.to_string(), num(d.n), num(d.npop)])?;
    }
    out.finish()
}

/// Reads `region,N,NPop` rows; the draw index is the 1-based position within its region.
pub fn read_population_draws(path: impl AsRef<Path>) -> Result<PopulationDraws> {
    let mut rows = Vec::new();
    let mut seen: BTreeMap<u32, u32> = BTreeMap::new();
    Table::open(path.as_ref(), &schema::population_draws())?.for_each(|row| {
        let region: u32 = row.parse(0, "region")?;
        let iter = seen.entry(region).or_insert(0);
        *iter += 1;
        rows.push(PopulationDraw {
            region,
            iter: *iter,
            n: row.parse(1, "N")?,
            npop: row.parse(2, "NPop")?,
        });
        Ok(())
    })?;
    Ok(PopulationDraws { rows })
}

pub fn write_population_t_draws(path: impl AsRef<Path>, draws: &[RegionTimeDraw]) -> Result<()> {
    let mut out = Out::create(path.as_ref(), &schema::population_t_draws())?;
    for d in draws {
        out.row([d.time.to_string(), d.region.to_string(), d.iter.to_string(), num(d.npop)])?;
    }
    out.finish()
}

pub fn write_population_od_draws(path: impl AsRef<Path>, draws: &[OdPopulationDraw]) -> Result<()> {
    let mut out = Out::create(path.as_ref(), &schema::population_od_draws())?;
    for d in draws {
        out.row([
            d.time_from.to_string(),
            d.time_to.to_string(),
            d.region_from.to_string(),
            d.region_to.to_string(),
            d.iter.to_string(),
            num(d.npop),
        ])?;
    }
    out.finish()
}

fn summary_fields(s: &Summary) -> [String; 12] {
    [
        num(s.mean),
        num(s.mode),
        num(s.median),
        num(s.min),
        num(s.max),
        num(s.q1),
        num(s.q3),
        num(s.iqr),
        num(s.sd),
        num(s.cv),
        num(s.ci_low),
        num(s.ci_high),
    ]
}

/// Writes a statistics table; `key_columns` name the leading key fields of each row.
pub fn write_stats<K: StatsKey>(path: impl AsRef<Path>, table: &StatsTable<K>) -> Result<()> {
    let mut out = Out::create(path.as_ref(), &schema::stats(K::COLUMNS))?;
    for (key, s) in &table.rows {
        let mut rec = key.fields();
        rec.extend(summary_fields(s));
        out.row(rec)?;
    }
    out.finish()
}

pub fn read_stats<K: StatsKey>(path: impl AsRef<Path>) -> Result<StatsTable<K>> {
    let mut rows = Vec::new();
    let nk = K::COLUMNS.len();
    Table::open(path.as_ref(), &schema::stats(K::COLUMNS))?.for_each(|row| {
        let keys = (0..nk)
            .map(|i| row.parse::<i64>(i, K::COLUMNS[i]))
            .collect::<Result<Vec<_>>>()?;
        let v = (0..12)
            .map(|i| row.parse::<f64>(nk + i, schema::STATS_COLUMNS[i]))
            .collect::<Result<Vec<_>>>()?;
        rows.push((
            K::from_fields(&keys),
            Summary {
                mean: v[0],
                mode: v[1],
                median: v[2],
                min: v[3],
                max: v[4],
                q1: v[5],
                q3: v[6],
                iqr: v[7],
                sd: v[8],
                cv: v[9],
                ci_low: v[10],
                ci_high: v[11],
            },
        ));
        Ok(())
    })?;
    Ok(StatsTable { rows })
}

/// Key columns of a statistics table row.
pub trait StatsKey: Sized {
    const COLUMNS: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
    fn from_fields(v: &[i64]) -> Self;
}

impl StatsKey for u32 {
    const COLUMNS: &'static [&'static str] = &["region"];
    fn fields(&self) -> Vec<String> {
        vec![self.to_string()]
    }
    fn from_fields(v: &[i64]) -> Self {
        v[0] as u32
    }
}

/// `(time, region)`
impl StatsKey for (i64, u32) {
    const COLUMNS: &'static [&'static str] = &["time", "region"];
    fn fields(&self) -> Vec<String> {
        vec![self.0.to_string(), self.1.to_string()]
    }
    fn from_fields(v: &[i64]) -> Self {
        (v[0], v[1] as u32)
    }
}

/// `(time_from, time_to, region_from, region_to)`
impl StatsKey for (i64, i64, u32, u32) {
    const COLUMNS: &'static [&'static str] = &["time_from", "time_to", "region_from", "region_to"];
    fn fields(&self) -> Vec<String> {
        vec![
            self.0.to_string(),
            self.1.to_string(),
            self.2.to_string(),
            self.3.to_string(),
        ]
    }
    fn from_fields(v: &[i64]) -> Self {
        (v[0], v[1], v[2] as u32, v[3] as u32)
    }
}
