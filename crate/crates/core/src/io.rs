//! File formats: binary and CSV environments, measure paths, field paths
//! and norm probes.
//!
//! Binary environment layout (little endian): `u32 d, u32 n, u32 M,
//! u64 seed, u8 law tag, f64 law parameter`, then the `(nM)^d` potential
//! values as `f64` in row-major site order. Law tags: 1 rademacher,
//! 2 centered uniform, 3 two-point (parameter `p`), 0 custom (parameter
//! `ν`). Environments are always read back on a periodic box.

use std::io::{BufRead, Read, Write};

use crate::environment::{renormalization_constant, Environment, EnvironmentSpec, PotentialLaw};
use crate::error::{Error, Result};
use crate::lattice::{Field, LatticeBox};
use crate::particle::MeasurePath;

pub fn write_environment_binary<W: Write>(env: &Environment, mut w: W) -> Result<()> {
    let lat = env.lattice();
    let (seed, (tag, param)) = match env.spec() {
        Some(spec) => (spec.seed, spec.law.tag()),
        None => (0, (0, env.nu())),
    };
    w.write_all(&(lat.dim() as u32).to_le_bytes())?;
    w.write_all(&(lat.scale() as u32).to_le_bytes())?;
    w.write_all(&(lat.side() as u32).to_le_bytes())?;
    w.write_all(&seed.to_le_bytes())?;
    w.write_all(&[tag])?;
    w.write_all(&param.to_le_bytes())?;
    for v in env.xi().values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_environment_binary<R: Read>(mut r: R) -> Result<Environment> {
    let dim = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let scale = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let side = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let seed = u64::from_le_bytes(read_array(&mut r)?);
    let [tag] = read_array::<1, _>(&mut r)?;
    let param = f64::from_le_bytes(read_array(&mut r)?);
    let lattice = LatticeBox::periodic(dim, scale, side)?;
    let mut values = Vec::with_capacity(lattice.num_sites());
    for _ in 0..lattice.num_sites() {
        values.push(f64::from_le_bytes(read_array(&mut r)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after environment".into()));
    }
    let xi = Field::new(lattice, values)?;
    let c_n = if dim == 2 {
        renormalization_constant(2, scale)?
    } else {
        0.0
    };
    match tag {
        0 => Environment::from_potential(xi, c_n, param),
        _ => {
            let law = PotentialLaw::from_tag(tag, param)
                .ok_or_else(|| Error::Format(format!("unknown law tag {tag}")))?;
            law.validate()?;
            Ok(Environment::from_potential(xi, c_n, law.mean_positive_part())?
                .with_origin(EnvironmentSpec { law, lattice, seed }))
        }
    }
}

/// CSV with header `site,x0,x1,xi`; `x1` is 0 in `d = 1`.
pub fn write_environment_csv<W: Write>(env: &Environment, mut w: W) -> Result<()> {
    let lat = env.lattice();
    writeln!(w, "site,x0,x1,xi")?;
    for (i, v) in env.xi().values().iter().enumerate() {
        let x = lat.position(i);
        writeln!(w, "{i},{},{},{v}", x[0], x[1])?;
    }
    Ok(())
}

/// CSV with header `replica,time,field_id,value,population`, where value
/// is `⟨μ_t, φ_j⟩`.
pub fn write_measure_paths<W: Write>(paths: &[MeasurePath], mut w: W) -> Result<()> {
    writeln!(w, "replica,time,field_id,value,population")?;
    for path in paths {
        for (k, t) in path.times.iter().enumerate() {
            for j in 0..path.pairings[k].len() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    path.replica,
                    t,
                    j,
                    path.measure(k, j),
                    path.populations[k]
                )?;
            }
        }
    }
    Ok(())
}

/// One row of a measure-path CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasureRecord {
    pub replica: u64,
    pub time: f64,
    pub field_id: usize,
    pub value: f64,
    pub population: u64,
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("cannot parse {what} from {s:?}")))
}

pub fn read_measure_records<R: BufRead>(r: R) -> Result<Vec<MeasureRecord>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != "replica,time,field_id,value,population" {
        return Err(Error::Format(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::Format(format!("expected 5 columns in {line:?}")));
        }
        out.push(MeasureRecord {
            replica: parse(cols[0], "replica")?,
            time: parse(cols[1], "time")?,
            field_id: parse(cols[2], "field_id")?,
            value: parse(cols[3], "value")?,
            population: parse(cols[4], "population")?,
        });
    }
    Ok(out)
}

/// CSV with header `site,time,value` for a sequence of fields.
pub fn write_field_path<W: Write>(times: &[f64], fields: &[Field], mut w: W) -> Result<()> {
    if times.len() != fields.len() {
        return Err(Error::InvalidParameter("one time per field required".into()));
    }
    writeln!(w, "site,time,value")?;
    for (t, f) in times.iter().zip(fields) {
        for (i, v) in f.values().iter().enumerate() {
            writeln!(w, "{i},{t},{v}")?;
        }
    }
    Ok(())
}

/// One row of a norm-probe CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct NormProbe {
    pub quantity: String,
    pub dim: usize,
    pub n: usize,
    pub side: usize,
    pub seed: u64,
    pub value: f64,
}

/// CSV with header `quantity,d,n,M,seed,value`.
pub fn write_norm_probes<W: Write>(probes: &[NormProbe], mut w: W) -> Result<()> {
    writeln!(w, "quantity,d,n,M,seed,value")?;
    for p in probes {
        writeln!(w, "{},{},{},{},{},{}", p.quantity, p.dim, p.n, p.side, p.seed, p.value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::sample_environment;
    use proptest::prelude::*;

    fn roundtrip(env: &Environment) -> Environment {
        let mut buf = Vec::new();
        write_environment_binary(env, &mut buf).unwrap();
        read_environment_binary(buf.as_slice()).unwrap()
    }

    #[test]
    fn sampled_environment_roundtrip() {
        for (dim, law) in [(1, PotentialLaw::Rademacher), (2, PotentialLaw::TwoPoint { p: 0.3 })] {
            let env = sample_environment(&EnvironmentSpec {
                law,
                lattice: LatticeBox::periodic(dim, 2, 4).unwrap(),
                seed: 42,
            })
            .unwrap();
            assert_eq!(roundtrip(&env), env);
        }
    }

    #[test]
    fn truncated_and_trailing_input_rejected() {
        let env = Environment::constant(LatticeBox::periodic(1, 2, 2).unwrap(), 1.0);
        let mut buf = Vec::new();
        write_environment_binary(&env, &mut buf).unwrap();
        assert!(read_environment_binary(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(read_environment_binary(buf.as_slice()).is_err());
    }

    #[test]
    fn measure_csv_roundtrip() {
        let path = MeasurePath {
            replica: 3,
            normalization: 2.0,
            times: vec![0.0, 0.5],
            pairings: vec![vec![2.0, 1.0], vec![0.5, 0.25]],
            populations: vec![2, 1],
        };
        let mut buf = Vec::new();
        write_measure_paths(&[path], &mut buf).unwrap();
        let records = read_measure_records(buf.as_slice()).unwrap();
        assert_eq!(records.len(), 4);
        assert_eq!(records[3], MeasureRecord { replica: 3, time: 0.5, field_id: 1, value: 0.125, population: 1 });
    }

    #[test]
    fn csv_headers() {
        let lat = LatticeBox::periodic(1, 1, 4).unwrap();
        let mut buf = Vec::new();
        write_field_path(&[0.0], &[Field::constant(lat, 1.5)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("site,time,value\n0,0,1.5\n1,0,1.5\n"));
        assert_eq!(text.lines().count(), 5);
        let mut buf = Vec::new();
        write_environment_csv(&Environment::zero(lat), &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("site,x0,x1,xi\n0,-2,0,0\n"));
    }

    proptest! {
        #[test]
        fn custom_environment_roundtrip(values in prop::collection::vec(-50.0f64..50.0, 8), nu in 0.0f64..2.0) {
            let lat = LatticeBox::periodic(1, 2, 4).unwrap();
            let env = Environment::from_potential(Field::new(lat, values).unwrap(), 0.0, nu).unwrap();
            let back = roundtrip(&env);
            prop_assert_eq!(back.xi(), env.xi());
            prop_assert_eq!(back.nu(), nu);
        }
    }
}
