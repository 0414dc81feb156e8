import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from polarsim_figures.cli import main as figs_main
from polarsim_figures.recipes import FIGURE_IDS, recipe_for
from polarsim_figures.render import RenderError, load_csv, render

STATIC_CONFIG = {
    "scenario": "static-dynamics",
    "bath": {"alpha": 0.05, "omega_c": 10.0, "beta": 1.0},
    "system": {"delta": 1.0, "epsilon": 0.0},
    "solver": {
        "mode": "both", "dt": 0.01, "t_end": 3.0, "output_every": 10,
        "markov_memory_time": 20.0,
        "oracle": {"enabled": True, "dt": 0.05, "eps_svd": 1e-8, "t_th": 1.0,
                   "memory_steps": 20},
    },
}

LZ_CONFIG = {
    "scenario": "landau-zener",
    "bath": {"alpha": 0.1, "omega_c": 10.0, "beta": 1.0},
    "system": {"delta": 1.0, "sweep_rate": 1.0, "t_start": -4.0, "t_end": 4.0},
    "solver": {
        "mode": "both", "dt": 0.01, "output_every": 10,
        "markov_memory_time": 20.0,
        "oracle": {"enabled": True, "dt": 0.05, "eps_svd": 1e-8, "t_th": 1.0,
                   "memory_steps": 20},
    },
}

SWEEP_ALPHA_CONFIG = {
    "scenario": "steady-sweep-alpha",
    "bath": {"alpha": 0.2, "omega_c": 10.0, "beta": 1.0},
    "system": {"delta": 1.0, "epsilon": 0.0},
    "solver": {"dt": 0.02, "oracle": {"enabled": False}},
    "alpha_values": [0.05, 0.2, 0.4],
}

SWEEP_BETA_CONFIG = {
    "scenario": "steady-sweep-temperature",
    "bath": {"alpha": 0.2, "omega_c": 10.0, "beta": 1.0},
    "system": {"delta": 1.0, "epsilon": 0.0},
    "solver": {"dt": 0.02, "oracle": {"enabled": False}},
    "beta_values": [0.5, 1.0, 2.0],
}


def run_harness(config: dict, out_dir: Path, tmp: Path) -> None:
    cfg_path = tmp / f"{config['scenario']}.json"
    cfg_path.write_text(json.dumps(config))
    proc = subprocess.run(
        [sys.executable, "-m", "polarsim.cli", "run", "--config", str(cfg_path),
         "--out", str(out_dir)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


@pytest.fixture(scope="session")
def harness_out(tmp_path_factory) -> Path:
    """Real harness output produced through the public CLI."""
    tmp = tmp_path_factory.mktemp("harness")
    out = tmp / "out"
    run_harness(STATIC_CONFIG, out, tmp)
    run_harness(LZ_CONFIG, out, tmp)
    run_harness(SWEEP_ALPHA_CONFIG, out, tmp)
    run_harness(SWEEP_BETA_CONFIG, out, tmp)
    return out


@pytest.mark.parametrize("figure_id", FIGURE_IDS)
def test_all_figures_render(figure_id, harness_out, tmp_path):
    out_file = tmp_path / f"{figure_id}.png"
    recipe = recipe_for(figure_id, out_path=out_file,
                        xlim=(-4, 4) if figure_id == "fig5" else None)
    panels = render(recipe, harness_out)
    assert out_file.exists() and out_file.stat().st_size > 0
    assert panels


def test_fig5_has_five_series_per_panel(harness_out, tmp_path):
    recipe = recipe_for("fig5", out_path=tmp_path / "fig5.png", xlim=(-4, 4))
    panels = render(recipe, harness_out)
    for panel in ("sx", "sy"):
        labels = set(panels[panel])
        assert labels == {
            "pme-tcl corrected", "pme-tcl uncorrected",
            "pme-markov corrected", "pme-markov uncorrected", "oracle",
        }


def test_fig2_series_tags(harness_out, tmp_path):
    recipe = recipe_for("fig2", out_path=tmp_path / "fig2.png")
    panels = render(recipe, harness_out)
    assert set(panels["population"]) == {"pme-tcl", "pme-markov", "oracle"}


def test_fig3_styles_distinguish_corrected(harness_out, tmp_path):
    recipe = recipe_for("fig3a", out_path=tmp_path / "fig3a.png")
    panels = render(recipe, harness_out)
    assert set(panels["steady"]) == {"corrected", "uncorrected"}
    x, corrected = panels["steady"]["corrected"]
    _, uncorrected = panels["steady"]["uncorrected"]
    assert np.all(np.abs(corrected) >= np.abs(uncorrected) - 1e-12)


def test_fig3b_temperature_axis(harness_out, tmp_path):
    recipe = recipe_for("fig3b", out_path=tmp_path / "fig3b.png")
    panels = render(recipe, harness_out)
    x, _ = panels["steady"]["corrected"]
    assert np.all(np.diff(x) > 0)
    assert x[0] == pytest.approx(0.5)  # beta = 2 -> T = 0.5
    assert x[-1] == pytest.approx(2.0)


def test_rendering_is_deterministic(harness_out, tmp_path):
    recipe = recipe_for("fig2", out_path=tmp_path / "a.png")
    first = render(recipe, harness_out)
    second = render(recipe, harness_out, out_path=tmp_path / "b.png")
    for label in first["population"]:
        for a, b in zip(first["population"][label], second["population"][label]):
            assert np.array_equal(a, b)


def test_missing_csv_is_an_error(tmp_path):
    recipe = recipe_for("fig2", out_path=tmp_path / "x.png")
    with pytest.raises(RenderError, match="not found"):
        render(recipe, tmp_path)


def test_empty_csv_emits_no_image(tmp_path):
    (tmp_path / "static-dynamics.csv").write_text(
        "# polarsim config=deadbeef\n"
        "t,sz,coh_pol_re,coh_pol_im,sx_corrected,sy_corrected,"
        "sx_uncorrected,sy_uncorrected,source\n")
    out_file = tmp_path / "fig2.png"
    recipe = recipe_for("fig2", out_path=out_file)
    with pytest.raises(RenderError, match="no data rows"):
        render(recipe, tmp_path)
    assert not out_file.exists()


def test_missing_column_names_column_and_file(tmp_path):
    (tmp_path / "static-dynamics.csv").write_text(
        "t,sz,source\n0.0,1.0,pme-tcl\n")
    recipe = recipe_for("fig2", out_path=tmp_path / "fig2.png")
    with pytest.raises(RenderError) as err:
        load_csv(recipe, tmp_path)
    assert "sx_corrected" in str(err.value)
    assert "static-dynamics.csv" in str(err.value)


def test_unknown_figure_id():
    with pytest.raises(ValueError):
        recipe_for("fig9")


def test_cli_end_to_end(harness_out, tmp_path, capsys):
    out_file = tmp_path / "fig4.png"
    assert figs_main(["fig4", "--in", str(harness_out),
                      "--out", str(out_file)]) == 0
    assert out_file.exists()
    assert figs_main(["fig2", "--in", str(tmp_path / "nowhere"),
                      "--out", str(tmp_path / "y.png")]) == 2
