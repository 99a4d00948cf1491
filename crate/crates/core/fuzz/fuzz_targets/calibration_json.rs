#![no_main]

use libfuzzer_sys::fuzz_target;
use nanosim::calibration::CalibrationFile;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = CalibrationFile::from_json(text);
    }
});
