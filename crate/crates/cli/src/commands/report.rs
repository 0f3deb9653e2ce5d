//! `avasr report`: merge evaluation CSVs into combined CSV and text
//! tables (the multi-variant comparison view).

use std::path::Path;

use avasr_core::eval::EvalMatrix;

use crate::error::Result;

pub fn cmd_report(csv_paths: &[std::path::PathBuf], out_dir: &Path) -> Result<()> {
    let mut combined = EvalMatrix::default();
    for path in csv_paths {
        let text = std::fs::read_to_string(path)?;
        combined.merge(EvalMatrix::parse_csv(&text).map_err(crate::error::CliError::Core)?);
    }
    combined.sort_canonical();
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("combined.csv"), combined.render_csv())?;
    std::fs::write(out_dir.join("combined.txt"), combined.render_table())?;
    print!("{}", combined.render_table());
    Ok(())
}
