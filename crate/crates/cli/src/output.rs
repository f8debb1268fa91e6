//! CSV emission. Numbers carry 12 significant digits in `%g` style.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

pub const SIGNIFICANT: usize = 12;

/// Format like C's `%.12g`: shortest of fixed and scientific, trailing zeros
/// removed.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIGNIFICANT - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= SIGNIFICANT as i32 {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (SIGNIFICANT as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

/// Table writer to a file, or stdout when no path is given.
pub struct Table {
    inner: csv::Writer<Box<dyn Write>>,
}

impl Table {
    pub fn create(path: Option<&Path>, header: &[&str]) -> io::Result<Self> {
        let sink: Box<dyn Write> = match path {
            Some(p) => Box::new(File::create(p)?),
            None => Box::new(io::stdout()),
        };
        let mut inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(sink);
        inner.write_record(header).map_err(io::Error::other)?;
        Ok(Self { inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> io::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(io::Error::other)
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g() {
        assert_eq!(fmt_num(0.3), "0.3");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_num(2.0), "2");
        assert_eq!(fmt_num(-1234.5), "-1234.5");
        assert_eq!(fmt_num(1e-12), "1e-12");
        assert_eq!(fmt_num(1.5e-5), "1.5e-05");
        assert_eq!(fmt_num(123456789012345.0), "1.23456789012e+14");
        assert_eq!(fmt_num(0.0001), "0.0001");
        assert_eq!(fmt_num(f64::NAN), "NaN");
        assert_eq!(fmt_opt(None), "");
    }
}
