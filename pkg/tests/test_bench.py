from igt.bench import check_rows, render_table, run_bench


def test_bench_rows_and_contract():
    rows = run_bench([16, 32, 64], d=16, block_list=[4, 8], n_heads=2, precision="f64")
    assert len(rows) == 6
    for r in rows:
        assert r.naive_buffer_elements == r.n * r.n
        assert r.max_abs_deviation <= 1e-12
    # auxiliary footprint must match across N for a fixed block
    by_block = {}
    for r in rows:
        by_block.setdefault(r.block, set()).add(r.tiled_aux_elements)
    assert all(len(s) == 1 for s in by_block.values())
    assert check_rows(rows, "f64") == []


def test_bench_aux_grows_with_block_not_n():
    rows = run_bench([64, 128], d=16, block_list=[4, 16], n_heads=2, precision="f32")
    aux = {r.block: r.tiled_aux_elements for r in rows}
    assert aux[16] > aux[4]
    assert check_rows(rows, "f32") == []


def test_render_table_shape():
    rows = run_bench([16], d=16, block_list=[4], n_heads=2, precision="f64")
    table = render_table(rows)
    lines = table.splitlines()
    assert len(lines) == 2
    assert "max_dev" in lines[0]


def test_check_rows_flags_violations():
    rows = run_bench([16], d=16, block_list=[4], n_heads=2, precision="f64")
    rows[0].max_abs_deviation = 1.0
    failures = check_rows(rows, "f64")
    assert any("deviation" in f for f in failures)
