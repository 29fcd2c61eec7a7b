use std::path::{Path, PathBuf};
use std::process::Command;

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/structpen.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let mut n = 0;
    for line in src.lines() {
        if let Some(rest) = line.split("extern \"C\" fn ").nth(1) {
            let name = rest.split('(').next().unwrap();
            assert!(text.contains(&format!("{name}(")), "{name} missing from header");
            n += 1;
        }
    }
    assert!(n >= 12);
    assert!(text.contains("typedef struct SpFit SpFit;"));
    assert!(text.contains("SP_STATUS_NUMERICAL = 5"));
}

fn c_compiler() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok().filter(|o| o.status.success()).map(|_| cc)
}

const PROGRAM: &str = r#"
#include <stdio.h>
#include "structpen.h"
int main(void) {
    double y[8] = {1, 2, 2, 4, 3, 6, 4, 8};
    double x[12] = {1, 0, 1, 2, 1, 0, 3, 0, 1, 4, 1, 1};
    size_t sizes[2] = {2, 1};
    SpDataset *ds = NULL;
    if (sp_dataset_new(y, 4, 2, x, 3, sizes, 2, &ds) != SP_STATUS_OK) return 1;
    SpFit *fit = NULL;
    if (sp_fit(ds, "lasso", 0.01, NULL, 0, NULL, 0, &fit) != SP_STATUS_OK) return 2;
    double b[6];
    if (sp_fit_coefficients(fit, b, 6) != SP_STATUS_OK) return 3;
    if (sp_fit(ds, "bogus", 0.01, NULL, 0, NULL, 0, &fit) != SP_STATUS_INVALID_ARGUMENT) return 4;
    if (sp_last_error() == NULL) return 5;
    printf("%.6f\n", b[0]);
    sp_fit_free(fit);
    sp_dataset_free(ds);
    return 0;
}
"#;

#[test]
fn header_compiles_and_links_from_c() {
    let Some(cc) = c_compiler() else {
        eprintln!("no C compiler found; header compile check skipped");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let inc = header().parent().unwrap().to_path_buf();
    let syntax = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&inc)
        .arg(&src)
        .output()
        .unwrap();
    assert!(syntax.status.success(), "{}", String::from_utf8_lossy(&syntax.stderr));

    // target/<profile>/deps/<test exe> -> target/<profile>/libstructpen_ffi.a
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().unwrap().parent().unwrap().join("libstructpen_ffi.a");
    if !lib.exists() {
        eprintln!("static library not built; link check skipped");
        return;
    }
    let bin = dir.path().join("main");
    let link = Command::new(&cc)
        .args(["-std=c99", "-I"])
        .arg(&inc)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(link.status.success(), "{}", String::from_utf8_lossy(&link.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let b0: f64 = String::from_utf8_lossy(&run.stdout).trim().parse().unwrap();
    assert!(b0.is_finite());
}
