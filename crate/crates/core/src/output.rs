//! Run outputs: CSV diagnostics, versioned state snapshots and bit-exact
//! binary checkpoints.

use crate::energy::EnergyReport;
use crate::error::{Error, Result};
use crate::field::FarFieldRow;
use crate::initial_data::{Ensemble, Particle};
use crate::local_energy::KinematicsRecord;
use crate::vec3::Vec3;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// 17 significant digits round-trip every finite f64 exactly.
fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.17e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

pub struct EnergyCsv(BufWriter<File>);

impl EnergyCsv {
    pub fn create(path: &Path) -> Result<EnergyCsv> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(
            w,
            "t,kinetic,potential_double_sum,total,field_energy_quadrature,tail_correction,identity_residual"
        )?;
        Ok(EnergyCsv(w))
    }

    pub fn append(&mut self, r: &EnergyReport) -> Result<()> {
        writeln!(
            self.0,
            "{},{},{},{},{},{},{}",
            fmt(r.t),
            fmt(r.kinetic),
            fmt(r.potential_double_sum),
            fmt(r.total),
            fmt_opt(r.field_energy_quadrature),
            fmt_opt(r.tail_correction),
            fmt_opt(r.identity_residual),
        )?;
        Ok(())
    }
}

pub struct KinematicsCsv(BufWriter<File>);

impl KinematicsCsv {
    pub fn create(path: &Path) -> Result<KinematicsCsv> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "t,v_max,r_disp,max_field_integral,tau_ratio")?;
        Ok(KinematicsCsv(w))
    }

    pub fn append(&mut self, r: &KinematicsRecord) -> Result<()> {
        writeln!(
            self.0,
            "{},{},{},{},{}",
            fmt(r.t),
            fmt(r.v_max),
            fmt(r.r_disp),
            fmt(r.max_field_integral),
            fmt_opt(r.tau_ratio),
        )?;
        Ok(())
    }
}

pub struct QsupCsv(BufWriter<File>);

impl QsupCsv {
    pub fn create(path: &Path) -> Result<QsupCsv> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "t,qsup,mu_x,mu_y,mu_z,radius")?;
        Ok(QsupCsv(w))
    }

    pub fn append(&mut self, t: f64, q: f64, mu: Vec3, radius: f64) -> Result<()> {
        writeln!(
            self.0,
            "{},{},{},{},{},{}",
            fmt(t),
            fmt(q),
            fmt(mu.x),
            fmt(mu.y),
            fmt(mu.z),
            fmt(radius)
        )?;
        Ok(())
    }
}

pub fn write_farfield_csv(path: &Path, rows: &[FarFieldRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "radius,max_e,bound,ratio")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            fmt(r.radius),
            fmt(r.max_e),
            fmt(r.bound),
            fmt(r.ratio)
        )?;
    }
    Ok(())
}

const STATE_VERSION: &str = "vlasim-state v1";

/// Versioned CSV snapshot of the full particle state at one time.
pub fn write_state_csv(path: &Path, ens: &Ensemble, t: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# {STATE_VERSION}")?;
    let sigmas: Vec<String> = ens
        .totals
        .iter()
        .map(|s| format!("{}:{}", s.id, fmt(s.sigma)))
        .collect();
    writeln!(
        w,
        "# t={} dx={} dv={} species={}",
        fmt(t),
        fmt(ens.dx),
        fmt(ens.dv),
        sigmas.join(";")
    )?;
    writeln!(
        w,
        "species,x,y,z,vx,vy,vz,x0,y0,z0,v0x,v0y,v0z,weight"
    )?;
    for p in &ens.particles {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.species,
            fmt(p.x.x),
            fmt(p.x.y),
            fmt(p.x.z),
            fmt(p.v.x),
            fmt(p.v.y),
            fmt(p.v.z),
            fmt(p.x0.x),
            fmt(p.x0.y),
            fmt(p.x0.z),
            fmt(p.v0.x),
            fmt(p.v0.y),
            fmt(p.v0.z),
            fmt(p.weight),
        )?;
    }
    Ok(())
}

/// Read a state snapshot back; returns the ensemble and its time stamp.
pub fn read_state_csv(path: &Path) -> Result<(Ensemble, f64)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let version = lines
        .next()
        .ok_or_else(|| Error::Snapshot("empty snapshot".into()))??;
    if version.trim() != format!("# {STATE_VERSION}") {
        return Err(Error::Snapshot(format!(
            "unsupported snapshot version line: {version}"
        )));
    }
    let meta = lines
        .next()
        .ok_or_else(|| Error::Snapshot("missing metadata line".into()))??;
    let mut t = 0.0;
    let mut dx = 1.0;
    let mut dv = 1.0;
    let mut sigma: Vec<(u32, f64)> = Vec::new();
    for tok in meta.trim_start_matches('#').split_whitespace() {
        if let Some((k, v)) = tok.split_once('=') {
            match k {
                "t" => t = parse_f64(v)?,
                "dx" => dx = parse_f64(v)?,
                "dv" => dv = parse_f64(v)?,
                "species" => {
                    for pair in v.split(';') {
                        if pair.is_empty() {
                            continue;
                        }
                        let (id, s) = pair
                            .split_once(':')
                            .ok_or_else(|| Error::Snapshot(format!("bad species token {pair}")))?;
                        sigma.push((
                            id.parse()
                                .map_err(|e| Error::Snapshot(format!("bad species id: {e}")))?,
                            parse_f64(s)?,
                        ));
                    }
                }
                _ => {}
            }
        }
    }
    let _header = lines.next();
    let mut particles = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 14 {
            return Err(Error::Snapshot(format!(
                "expected 14 columns, got {}",
                cols.len()
            )));
        }
        let f = |i: usize| parse_f64(cols[i]);
        particles.push(Particle {
            species: cols[0]
                .parse()
                .map_err(|e| Error::Snapshot(format!("bad species: {e}")))?,
            x: Vec3::new(f(1)?, f(2)?, f(3)?),
            v: Vec3::new(f(4)?, f(5)?, f(6)?),
            x0: Vec3::new(f(7)?, f(8)?, f(9)?),
            v0: Vec3::new(f(10)?, f(11)?, f(12)?),
            weight: f(13)?,
        });
    }
    Ok((Ensemble::from_parts(particles, &sigma, dx, dv), t))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|e| Error::Snapshot(format!("bad float {s:?}: {e}")))
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"VLASIMC1";

/// Bit-exact binary checkpoint of a simulation state.
pub fn write_checkpoint(
    path: &Path,
    ens: &Ensemble,
    t: f64,
    step_count: u64,
    dt: f64,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&t.to_le_bytes())?;
    w.write_all(&step_count.to_le_bytes())?;
    w.write_all(&dt.to_le_bytes())?;
    w.write_all(&ens.dx.to_le_bytes())?;
    w.write_all(&ens.dv.to_le_bytes())?;
    w.write_all(&(ens.totals.len() as u64).to_le_bytes())?;
    for s in &ens.totals {
        w.write_all(&s.id.to_le_bytes())?;
        w.write_all(&s.sigma.to_le_bytes())?;
    }
    w.write_all(&(ens.len() as u64).to_le_bytes())?;
    for p in &ens.particles {
        w.write_all(&p.species.to_le_bytes())?;
        for v in [
            p.x.x, p.x.y, p.x.z, p.v.x, p.v.y, p.v.z, p.x0.x, p.x0.y, p.x0.z, p.v0.x, p.v0.y,
            p.v0.z, p.weight,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Restore a checkpoint: (ensemble, t, step_count, dt).
pub fn read_checkpoint(path: &Path) -> Result<(Ensemble, f64, u64, f64)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Snapshot("not a checkpoint file".into()));
    }
    fn read_f64(r: &mut BufReader<File>) -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn read_u64(r: &mut BufReader<File>) -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn read_u32(r: &mut BufReader<File>) -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    let t = read_f64(&mut r)?;
    let step_count = read_u64(&mut r)?;
    let dt = read_f64(&mut r)?;
    let dx = read_f64(&mut r)?;
    let dv = read_f64(&mut r)?;
    let n_species = read_u64(&mut r)?;
    let mut sigma = Vec::with_capacity(n_species as usize);
    for _ in 0..n_species {
        let id = read_u32(&mut r)?;
        let s = read_f64(&mut r)?;
        sigma.push((id, s));
    }
    let n = read_u64(&mut r)?;
    let mut particles = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let species = read_u32(&mut r)?;
        let mut vals = [0.0f64; 13];
        for v in &mut vals {
            *v = read_f64(&mut r)?;
        }
        particles.push(Particle {
            species,
            x: Vec3::new(vals[0], vals[1], vals[2]),
            v: Vec3::new(vals[3], vals[4], vals[5]),
            x0: Vec3::new(vals[6], vals[7], vals[8]),
            v0: Vec3::new(vals[9], vals[10], vals[11]),
            weight: vals[12],
        });
    }
    Ok((Ensemble::from_parts(particles, &sigma, dx, dv), t, step_count, dt))
}
