//! `midsim-scenario v1` files: a version line followed by a TOML document
//! (key/value pairs plus polyline arrays of `[x, y]` points).

use super::{Scenario, World};
use crate::error::{Error, Result};

pub const SCENARIO_HEADER: &str = "midsim-scenario v1";
pub const WORLD_HEADER: &str = "midsim-world v1";

fn split_header<'a>(text: &'a str, header: &str) -> Result<&'a str> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    if first.trim() != header {
        return Err(Error::Format(format!("expected header {header:?}, found {:?}", first.trim())));
    }
    Ok(rest)
}

pub fn world_to_string(world: &World) -> Result<String> {
    let body = toml::to_string(world).map_err(|e| Error::Format(e.to_string()))?;
    Ok(format!("{WORLD_HEADER}\n{body}"))
}

pub fn world_from_str(text: &str) -> Result<World> {
    let mut w: World = toml::from_str(split_header(text, WORLD_HEADER)?).map_err(|e| Error::Format(e.to_string()))?;
    w.rebuild();
    Ok(w)
}

pub fn scenario_to_string(s: &Scenario) -> Result<String> {
    let body = toml::to_string(s).map_err(|e| Error::Format(e.to_string()))?;
    Ok(format!("{SCENARIO_HEADER}\n{body}"))
}

pub fn scenario_from_str(text: &str) -> Result<Scenario> {
    let mut s: Scenario =
        toml::from_str(split_header(text, SCENARIO_HEADER)?).map_err(|e| Error::Format(e.to_string()))?;
    s.world.rebuild();
    Ok(s)
}
