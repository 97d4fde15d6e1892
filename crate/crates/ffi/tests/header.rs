use std::path::Path;
use std::process::Command;

const HEADER: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/include/halfjoin.h");

#[test]
fn header_declares_the_api() {
    let text = std::fs::read_to_string(HEADER).unwrap();
    for name in [
        "typedef struct HjDataset HjDataset;",
        "typedef struct HjResultSet HjResultSet;",
        "HJ_STATUS_OK = 0",
        "hj_last_error(void)",
        "hj_dataset_load_fvecs",
        "hj_self_join",
        "hj_fp64_join",
        "hj_overlap_accuracy",
        "hj_required_reuse",
        "hj_swizzle_address",
        "hj_calibrate_epsilon",
        "hj_result_free",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "halfjoin.h"
int run(void) {
    HjDataset *ds = NULL;
    HjResultSet *rs = NULL;
    HjTileConfig cfg;
    if (hj_dataset_synthetic(64, 8, 1, 0.0f, 1.0f, &ds) != HJ_STATUS_OK) return 1;
    hj_tile_config_default(&cfg);
    if (hj_self_join(ds, 0.5f, &cfg, &rs) != HJ_STATUS_OK) { hj_dataset_free(ds); return 2; }
    size_t n = hj_result_len(rs);
    const char *msg = hj_last_error();
    hj_result_free(rs);
    hj_dataset_free(ds);
    return (int)n + (msg != NULL);
}
"#,
    )
    .unwrap();
    let include = Path::new(HEADER).parent().unwrap();
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-fsyntax-only", "-I"])
        .arg(include)
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
