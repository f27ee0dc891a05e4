import pytest

from mpiwave.errors import ManifestError
from mpiwave.manifest import parse_manifest


def base_doc():
    return {
        "mode": "forward",
        "alphas": [1.0],
        "trajectories": [{"kind": "static", "point": [0.0, 0.0, 0.0]}],
        "packets": [{"center": [4.0, 0.0, 0.0], "sigma": 0.5}],
        "grid": {"s": 0.0, "t_max": 1.0, "n_steps": 100},
    }


def test_minimal_manifest_parses():
    man = parse_manifest(base_doc())
    assert man.tset.n == 1
    assert man.grid.n_steps == 100
    assert man.mode == "forward"


def test_unknown_top_level_key():
    doc = base_doc()
    doc["grdi"] = {}
    with pytest.raises(ManifestError, match="grdi"):
        parse_manifest(doc)


def test_unknown_trajectory_kind():
    doc = base_doc()
    doc["trajectories"] = [{"kind": "helix", "point": [0, 0, 0]}]
    with pytest.raises(ManifestError, match="helix"):
        parse_manifest(doc)


def test_wrong_kind_parameter():
    doc = base_doc()
    doc["trajectories"] = [{"kind": "static", "point": [0, 0, 0], "radius": 1.0}]
    with pytest.raises(ManifestError, match="radius"):
        parse_manifest(doc)


def test_alpha_length_mismatch():
    doc = base_doc()
    doc["alphas"] = [1.0, 2.0]
    with pytest.raises(ManifestError, match="alphas"):
        parse_manifest(doc)


def test_two_centers_need_separation():
    doc = base_doc()
    doc["trajectories"].append({"kind": "static", "point": [1.0, 0.0, 0.0]})
    doc["alphas"] = [1.0, 1.0]
    with pytest.raises(ManifestError, match="separation"):
        parse_manifest(doc)
    doc["separation"] = 0.5
    assert parse_manifest(doc).tset.n == 2


def test_backward_mode_requires_backward_packets():
    doc = base_doc()
    doc["mode"] = "backward"
    with pytest.raises(ManifestError, match="backward_packets"):
        parse_manifest(doc)
    doc["backward_packets"] = [{"center": [3.0, 0.0, 0.0], "sigma": 0.4}]
    assert parse_manifest(doc).backward_data is not None


def test_packet_weight_forms():
    doc = base_doc()
    doc["packets"][0]["weight"] = [0.5, -0.25]
    assert parse_manifest(doc).data.packets[0].weight == 0.5 - 0.25j
    doc["packets"][0]["weight"] = 2
    assert parse_manifest(doc).data.packets[0].weight == 2.0 + 0.0j


def test_reconstruct_times_must_lie_on_grid_span():
    doc = base_doc()
    doc["reconstruct"] = {"times": [0.5, 1.5]}
    with pytest.raises(ManifestError, match="outside"):
        parse_manifest(doc)


def test_sweep_requires_values():
    doc = base_doc()
    doc["sweep"] = {"parameter": "alphas[0]", "values": []}
    with pytest.raises(ManifestError, match="empty"):
        parse_manifest(doc)


def test_kgrid_default_sized_from_spectra():
    doc = base_doc()
    doc["packets"][0]["momentum"] = [3.0, 0.0, 0.0]
    man = parse_manifest(doc)
    kg = man.kgrid_or_default()
    assert kg.points == 48
    assert kg.extent == pytest.approx(3.0 + 4.5 / 0.5 + 2.0)
    # explicit kgrid wins
    doc["kgrid"] = {"extent": 8.0, "points": 24}
    assert parse_manifest(doc).kgrid_or_default().extent == 8.0


def test_solver_options_flow_through():
    doc = base_doc()
    doc["solver"] = {"inner_nodes": 48, "filon_panels": 36}
    man = parse_manifest(doc)
    assert man.options.inner_nodes == 48
    assert man.options.filon_panels == 36
    doc["solver"]["inner_nodes"] = 1
    with pytest.raises(ManifestError):
        parse_manifest(doc)
