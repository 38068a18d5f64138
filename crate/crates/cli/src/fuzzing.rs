//! Bodies of the fuzz targets, shared with the corpus replay test.

use crate::config::ExperimentConfig;
use crate::report::{
    read_csv, to_csv_string, CsvRecord, DiophantineRow, ExampleRow, FrequencyRow, KamRow, KnfRow, LatticeRow,
    SimulationRow,
};

/// Parsing and resolving a config must fail cleanly, never panic.
pub fn config_json(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = ExperimentConfig::from_json(text) else { return };
    if let Ok(sys) = cfg.system() {
        let _ = sys.resolve();
    }
    let _ = cfg.initial();
    let _ = cfg.time_grid();
    let _ = cfg.kam_config();
}

/// Whatever parses must write back and parse again to the same text.
fn round_trip<R: CsvRecord>(data: &[u8]) {
    let Ok(rows) = read_csv::<R, _>(data) else { return };
    let Some(width) = rows.first().map(R::width) else { return };
    if rows.iter().any(|r| r.width() != width) {
        return;
    }
    let text = to_csv_string(&rows, width).expect("parsed rows serialize");
    let again: Vec<R> = read_csv(text.as_bytes()).expect("own output parses");
    assert_eq!(to_csv_string(&again, width).expect("serialize"), text);
}

/// The first byte picks the record type.
pub fn csv_reader(data: &[u8]) {
    let Some((&tag, rest)) = data.split_first() else { return };
    match tag % 7 {
        0 => round_trip::<SimulationRow>(rest),
        1 => round_trip::<FrequencyRow>(rest),
        2 => round_trip::<DiophantineRow>(rest),
        3 => round_trip::<KnfRow>(rest),
        4 => round_trip::<KamRow>(rest),
        5 => round_trip::<LatticeRow>(rest),
        _ => round_trip::<ExampleRow>(rest),
    }
}
