#![no_main]

use libfuzzer_sys::fuzz_target;
use regime_stackelberg::model::parse_matrix_literal;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = parse_matrix_literal(text) {
        assert!(m.nrows() > 0 && m.ncols() > 0);
        assert!(m.iter().all(|v| v.is_finite()));
    }
});
