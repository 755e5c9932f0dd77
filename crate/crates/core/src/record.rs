//! Line-oriented `key value...` records used for checkpoints.

use std::collections::HashMap;
use std::str::FromStr;

use crate::error::{Error, Result};

pub(crate) struct Fields {
    entries: HashMap<String, (u64, Vec<String>)>,
}

pub(crate) fn parse_fields(text: &str) -> Result<Fields> {
    let mut entries = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n as u64 + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default().to_string();
        let values: Vec<String> = parts.map(str::to_string).collect();
        if entries.insert(key.clone(), (line_no, values)).is_some() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("duplicate key {key:?}"),
            });
        }
    }
    Ok(Fields { entries })
}

impl Fields {
    fn get(&self, key: &str) -> Result<&(u64, Vec<String>)> {
        self.entries.get(key).ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("missing key {key:?}"),
        })
    }

    pub fn line_of(&self, key: &str) -> u64 {
        self.entries.get(key).map_or(0, |e| e.0)
    }

    pub fn single(&self, key: &str) -> Result<String> {
        let (line, values) = self.get(key)?;
        match values.as_slice() {
            [v] => Ok(v.clone()),
            _ => Err(Error::Parse {
                line: *line,
                msg: format!("{key:?} expects exactly one value"),
            }),
        }
    }

    pub fn scalar<T: FromStr>(&self, key: &str) -> Result<T> {
        let line = self.line_of(key);
        let v = self.single(key)?;
        v.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad value {v:?} for {key:?}"),
        })
    }

    pub fn vector<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let (line, values) = self.get(key)?;
        values
            .iter()
            .map(|v| {
                v.parse().map_err(|_| Error::Parse {
                    line: *line,
                    msg: format!("bad value {v:?} for {key:?}"),
                })
            })
            .collect()
    }
}
