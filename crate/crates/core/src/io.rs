//! CSV formats for event logs and book paths.
//!
//! Event log: header `time,type,volume,jump`; time in seconds, type 1..=12,
//! volume in whole shares, jump in ticks.
//! Book path: header `time,bid,ask`, prices in currency units on the tick grid.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::IoError;
use crate::lob::{price_to_ticks, OrderEvent, OrderType, PathPoint};

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io { path: path.display().to_string(), source }
}

/// Number of decimals needed to print prices on a grid of size `tick`.
pub fn price_decimals(tick: f64) -> usize {
    (0..=12)
        .find(|&d| {
            let scaled = tick * 10f64.powi(d as i32);
            (scaled - scaled.round()).abs() < 1e-9 * scaled.abs().max(1.0)
        })
        .unwrap_or(12)
}

pub fn write_events<W: Write>(out: W, events: &[OrderEvent]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    let e = |e: csv::Error| IoError::Other(e.to_string());
    w.write_record(["time", "type", "volume", "jump"]).map_err(e)?;
    for ev in events {
        w.write_record([
            ev.time.to_string(),
            ev.order_type.code().to_string(),
            ev.volume.to_string(),
            ev.jump.to_string(),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|err| IoError::Other(err.to_string()))
}

pub fn write_path<W: Write>(out: W, path: &[PathPoint], tick: f64) -> Result<(), IoError> {
    let d = price_decimals(tick);
    let mut w = csv::Writer::from_writer(out);
    let e = |e: csv::Error| IoError::Other(e.to_string());
    w.write_record(["time", "bid", "ask"]).map_err(e)?;
    for p in path {
        w.write_record([
            p.time.to_string(),
            format!("{:.*}", d, p.bid as f64 * tick),
            format!("{:.*}", d, p.ask as f64 * tick),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|err| IoError::Other(err.to_string()))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input)
}

fn check_header(r: &mut csv::Reader<impl Read>, expected: &[&str], name: &str) -> Result<(), IoError> {
    let headers = r.headers().map_err(|e| IoError::Parse { path: name.into(), line: 1, message: e.to_string() })?;
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(IoError::Parse {
            path: name.into(),
            line: 1,
            message: format!("expected header `{}`, got `{}`", expected.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    Ok(())
}

/// Parses an event log. `name` labels error messages.
pub fn read_events<R: Read>(input: R, name: &str) -> Result<Vec<OrderEvent>, IoError> {
    let mut r = reader(input);
    check_header(&mut r, &["time", "type", "volume", "jump"], name)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| IoError::Parse {
            path: name.into(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let perr = |message: String| IoError::Parse { path: name.into(), line, message };
        let time: f64 = rec[0].parse().map_err(|_| perr(format!("bad time `{}`", &rec[0])))?;
        let code: u32 = rec[1].parse().map_err(|_| perr(format!("bad type `{}`", &rec[1])))?;
        let volume: u64 = rec[2].parse().map_err(|_| perr(format!("bad volume `{}`", &rec[2])))?;
        let jump: u32 = rec[3].parse().map_err(|_| perr(format!("bad jump `{}`", &rec[3])))?;
        let order_type = OrderType::new(code).map_err(|e| perr(e.to_string()))?;
        let ev = OrderEvent { time, order_type, volume, jump };
        ev.validate().map_err(|e| perr(e.to_string()))?;
        out.push(ev);
    }
    Ok(out)
}

/// Parses a book path, converting prices to ticks of size `tick`.
pub fn read_path<R: Read>(input: R, tick: f64, name: &str) -> Result<Vec<PathPoint>, IoError> {
    let mut r = reader(input);
    check_header(&mut r, &["time", "bid", "ask"], name)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| IoError::Parse {
            path: name.into(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let perr = |message: String| IoError::Parse { path: name.into(), line, message };
        let time: f64 = rec[0].parse().map_err(|_| perr(format!("bad time `{}`", &rec[0])))?;
        let bid: f64 = rec[1].parse().map_err(|_| perr(format!("bad bid `{}`", &rec[1])))?;
        let ask: f64 = rec[2].parse().map_err(|_| perr(format!("bad ask `{}`", &rec[2])))?;
        let bid = price_to_ticks(bid, tick).map_err(|e| perr(e.to_string()))?;
        let ask = price_to_ticks(ask, tick).map_err(|e| perr(e.to_string()))?;
        out.push(PathPoint { time, bid, ask });
    }
    Ok(out)
}

pub fn save_events(path: &Path, events: &[OrderEvent]) -> Result<(), IoError> {
    write_events(File::create(path).map_err(|e| io_err(path, e))?, events)
}

pub fn save_path(path: &Path, points: &[PathPoint], tick: f64) -> Result<(), IoError> {
    write_path(File::create(path).map_err(|e| io_err(path, e))?, points, tick)
}

pub fn load_events(path: &Path) -> Result<Vec<OrderEvent>, IoError> {
    read_events(File::open(path).map_err(|e| io_err(path, e))?, &path.display().to_string())
}

pub fn load_path(path: &Path, tick: f64) -> Result<Vec<PathPoint>, IoError> {
    read_path(File::open(path).map_err(|e| io_err(path, e))?, tick, &path.display().to_string())
}
