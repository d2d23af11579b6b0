import json
import os

import pytest

import render

HERE = os.path.dirname(os.path.abspath(__file__))
FIXTURE = os.path.join(HERE, "fixtures", "sweep_fixture.csv")
GOLDEN = os.path.join(HERE, "golden", "heatmap_layer.json")


def heatmap_spec(tmp_path, **extra):
    spec = {"kind": "heatmap", "inputs": [FIXTURE],
            "output": str(tmp_path / "map.png"), "value": "settling_time_s"}
    spec.update(extra)
    return spec


def test_heatmap_layer_matches_golden(tmp_path):
    layer = render.render(heatmap_spec(tmp_path), base=HERE)
    with open(GOLDEN) as fh:
        golden = json.load(fh)
    # the golden file stores the fixture path relative to the test directory
    layer["panels"][0]["input"] = os.path.relpath(layer["panels"][0]["input"], HERE)
    assert layer == golden
    assert (tmp_path / "map.png").exists()


def test_heatmap_blank_cells_stay_blank(tmp_path):
    layer = render.render(heatmap_spec(tmp_path), base=HERE)
    values = layer["panels"][0]["values"]
    assert values[0][1] is None  # the unsettled cell renders as a gap, not a number
    assert sum(row.count(None) for row in values) == 1


def test_schema_mismatch_names_missing_column(tmp_path):
    broken = tmp_path / "broken.csv"
    lines = open(FIXTURE).read().splitlines()
    header = lines[0].split(",")
    drop = header.index("settling_time_s")
    rows = [",".join(col for i, col in enumerate(line.split(",")) if i != drop)
            for line in lines]
    broken.write_text("\n".join(rows) + "\n")
    with pytest.raises(render.SchemaError, match="settling_time_s"):
        render.render(heatmap_spec(tmp_path, inputs=[str(broken)]))


def test_empty_csv_is_an_error_not_an_empty_image(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(render.SchemaError):
        render.render(heatmap_spec(tmp_path, inputs=[str(empty)]))
    header_only = tmp_path / "header.csv"
    header_only.write_text(open(FIXTURE).read().splitlines()[0] + "\n")
    with pytest.raises(render.SchemaError, match="no data rows"):
        render.render(heatmap_spec(tmp_path, inputs=[str(header_only)]))
    assert not (tmp_path / "map.png").exists()


def test_render_is_byte_stable(tmp_path):
    spec_a = heatmap_spec(tmp_path, output=str(tmp_path / "a.png"))
    spec_b = heatmap_spec(tmp_path, output=str(tmp_path / "b.png"))
    render.render(spec_a, base=HERE)
    render.render(spec_b, base=HERE)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_shared_color_scale_across_panels(tmp_path):
    second = tmp_path / "second.csv"
    text = open(FIXTURE).read().replace("0.9,", "1.9,", 1)
    second.write_text(text)
    layer = render.render(heatmap_spec(tmp_path, inputs=[FIXTURE, str(second)]))
    assert layer["vmin"] == 0.5
    assert layer["vmax"] == 1.9  # one scale over the union of both panels
    assert len(layer["panels"]) == 2


def make_trajectory_csv(path, n=20):
    import math
    header = ("t,i_d,i_q,omega_e,v_d,v_q,omega_ref,T_L,P_elec,P_cu,T_e")
    rows = [header]
    for k in range(n + 1):
        t = k * 2e-4
        inputs = ("", "", "", "") if k == n else ("1.0", "2.0", "0.5", "3.0")
        rows.append(",".join([
            repr(t), repr(math.sin(t * 50)), repr(math.cos(t * 50)), repr(100.0 * t),
            inputs[0], inputs[1], repr(120.0 * t), inputs[2], inputs[3],
            "0.4", "0.2",
        ]))
    path.write_text("\n".join(rows) + "\n")


def test_line_overlay_and_vector_plane(tmp_path):
    traj = tmp_path / "episode.csv"
    make_trajectory_csv(traj)
    layer = render.render({"kind": "line-overlay", "inputs": [str(traj)],
                           "output": str(tmp_path / "speed.png"),
                           "value": "omega_e", "reference": "omega_ref"})
    assert len(layer["lines"]) == 1
    assert len(layer["lines"][0]["t"]) == 21
    assert "reference" in layer["lines"][0]

    with pytest.raises(render.SchemaError, match="bogus"):
        render.render({"kind": "line-overlay", "inputs": [str(traj)],
                       "output": str(tmp_path / "x.png"), "value": "bogus"})

    plane = render.render({"kind": "vector-plane", "inputs": [str(traj)],
                           "output": str(tmp_path / "plane.png")})
    assert len(plane["trajectories"][0]["i_d"]) == 21


def test_training_curve(tmp_path):
    metrics = tmp_path / "metrics.csv"
    metrics.write_text(
        "epoch,L_s,L_c,L_o,L_f,total,settled_fraction,mean_overshoot,"
        "mean_efficiency,diverged_count\n"
        "1,1.0,0.5,0.1,0.9,2.0,0.0,0.1,,0\n"
        "2,0.8,0.4,0.05,0.7,1.55,0.25,0.08,0.5,0\n")
    layer = render.render({"kind": "training-curve", "inputs": [str(metrics)],
                           "output": str(tmp_path / "loss.png")})
    assert layer["curves"]["total"] == [2.0, 1.55]
    assert layer["epoch"] == [1.0, 2.0]


def test_manifest_driven_main(tmp_path):
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"figures": [
        {"kind": "heatmap", "inputs": [FIXTURE], "output": "out/map.png"},
    ]}))
    layers_path = tmp_path / "layers.json"
    assert render.main([str(manifest), "--dump-layers", str(layers_path)]) == 0
    assert (tmp_path / "out" / "map.png").exists()
    layers = json.loads(layers_path.read_text())
    assert layers[0]["kind"] == "heatmap"

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps([{"kind": "nope", "inputs": [FIXTURE],
                                "output": "x.png"}]))
    assert render.main([str(bad)]) == 1
