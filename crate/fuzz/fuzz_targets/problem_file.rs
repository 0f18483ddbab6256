#![no_main]

use libfuzzer_sys::fuzz_target;
use regime_stackelberg::model::{load_problem, to_problem_file};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(problem) = load_problem(text) {
        let again = load_problem(&to_problem_file(&problem)).expect("serialized problem must parse");
        assert_eq!(problem, again);
    }
});
