#!/usr/bin/env python3
"""Generate the packaged mock-lab fixtures and workflow template library.

The molecule screening fixture ships a committed table of 50 SMILES with
per-molecule QED / LD50 / docking-affinity values. Construction rule:

  * indices {2, 8, 17, 29, 35, 42} pass the property filter
    (QED >= 0.6 and LD50 >= 3.0) -- exactly 6 of 50;
  * of those, indices {17, 29} also pass the affinity filter
    (affinity <= -7.0 kcal/mol) -- exactly 2, and they carry the two
    published hit structures;
  * the first, second, third, and last entries are the published example
    inputs; every other SMILES is synthetic and only ever used as an
    opaque table key.

Run from the repo root:  python3 scripts/gen_fixtures.py
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from scp import canonical  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "src" / "scp" / "data"

HIT_A = "O=C(c1ccc(F)cc1F)N1CCN2C(=O)c3ccccc3C12c1ccc(Cl)cc1"
HIT_B = "O=C(c1cccc(F)c1)N1CCN2C(=O)c3ccccc3C12c1ccc(Cl)cc1"
FIRST = "O=C(Nc1cccc2c1CCCC2)N1CCc2c([nH]c3ccccc23)C1c1cccc(F)c1F"
SECOND = "Cc1ccccc1N1CCN(C2=Nc3cc(Cl)ccc3Nc3ccc(F)cc32)CC1"
THIRD = "O=C(c1ccccc1F)N1CCN2C(=O)c3ccccc3C12c1ccc(Cl)cc1"
LAST = "O=C(NCc1cccc(-c2cccc(-c3cc4c[nH]ccc-4n3)c2O)c1)Nc1ccc(F)cc1"

SURVIVOR_IDX = {2, 8, 17, 29, 35, 42}   # pass QED/LD50
HIT_IDX = {17, 29}                       # also pass affinity

CORES = ["c1ccccc1", "c1ccc(F)cc1", "c1ccc(Cl)cc1", "c1ccncc1", "c1cccnc1",
         "c1ccc(O)cc1", "c1ccc(C)cc1", "c1ccc(N)cc1", "c1ccsc1", "c1ccoc1"]
LINKS = ["C(=O)N", "NC(=O)", "C(=O)O", "OC(=O)", "S(=O)(=O)N", "CC(=O)N"]
TAILS = ["N1CCNCC1", "N1CCOCC1", "C1CCCCC1", "N1CCCC1", "CC(C)C", "CCO",
         "N(C)C", "C1CC1"]


def synthetic_smiles(i: int) -> str:
    core = CORES[i % len(CORES)]
    link = LINKS[(i // len(CORES)) % len(LINKS)]
    tail = TAILS[(i * 7 + 3) % len(TAILS)]
    methyl = "C" * ((i // 30) % 3)
    return f"{methyl}{core[:-1]}({link}{tail}){core[-1]}".replace("()", "")


def build_molecules() -> list[dict]:
    smiles = [None] * 50
    smiles[0], smiles[1], smiles[2], smiles[49] = FIRST, SECOND, THIRD, LAST
    smiles[17], smiles[29] = HIT_A, HIT_B
    seen = set(s for s in smiles if s)
    fill = 0
    for i in range(50):
        if smiles[i] is None:
            while True:
                candidate = synthetic_smiles(fill)
                fill += 1
                if candidate not in seen:
                    break
            smiles[i] = candidate
            seen.add(candidate)

    molecules = []
    for i, smi in enumerate(smiles):
        if i in SURVIVOR_IDX:
            qed = round(0.62 + 0.019 * (i % 10), 3)
            ld50 = round(3.05 + 0.08 * (i % 9), 3)
            if i == 17:
                affinity = -7.6
            elif i == 29:
                affinity = -7.2
            else:
                affinity = round(-5.9 - 0.3 * (i % 3), 2)
        else:
            mode = i % 3
            if mode == 0:    # fails drug-likeness only
                qed = round(0.30 + ((i * 11) % 25) / 100, 3)   # < 0.55
                ld50 = round(3.05 + ((i * 7) % 80) / 100, 3)
            elif mode == 1:  # fails toxicity only
                qed = round(0.61 + ((i * 5) % 20) / 100, 3)
                ld50 = round(2.05 + ((i * 9) % 85) / 100, 3)   # < 2.90
            else:            # fails both
                qed = round(0.28 + ((i * 13) % 27) / 100, 3)
                ld50 = round(1.90 + ((i * 7) % 90) / 100, 3)
            affinity = round(-4.2 - 0.05 * i, 2)
        molecules.append({"smiles": smi, "qed": qed, "ld50": ld50,
                          "affinity": affinity,
                          "ligand_file": f"mock://ligands/lig_{i:02d}.pdbqt"})
    return molecules


def check(molecules: list[dict]) -> None:
    passing = [m for m in molecules
               if m["qed"] >= 0.6 and m["ld50"] >= 3.0]
    assert len(passing) == 6, len(passing)
    hits = [m["smiles"] for m in passing if m["affinity"] <= -7.0]
    assert hits == [HIT_A, HIT_B], hits
    assert len({m["smiles"] for m in molecules}) == 50


def field(name, ftype, required=True, constraints=None):
    d = {"name": name, "type": ftype, "required": required}
    if constraints:
        d["constraints"] = constraints
    return d


def tool(tool_id, capability, description, params, outputs, *, latency, cost,
         risk, behavior, side_effect="none", reversible=False,
         compensation=None, scopes=("dry.execute",), failure_rate=0.0):
    descriptor = {
        "tool_id": tool_id, "capability_class": capability,
        "version": "1.0.0", "description": description,
        "params_schema": params, "outputs_schema": outputs,
        "side_effect": side_effect, "reversible": reversible,
        "estimates": {"latency_ms": latency, "cost_units": cost, "risk": risk},
        "security": {"required_scopes": sorted(scopes)},
    }
    if compensation:
        descriptor["compensation"] = compensation
    return {"descriptor": descriptor,
            "latency_model": {"kind": "fixed", "ms": latency},
            "failure_rate": failure_rate,
            "seed_sensitivity": True,
            "behavior": behavior}


def screening_fixture(molecules: list[dict]) -> dict:
    qed_rows = {m["smiles"]: {"qed": m["qed"]} for m in molecules}
    ld50_rows = {m["smiles"]: {"LD50_Zhu": m["ld50"]} for m in molecules}
    ligand_rows = {m["smiles"]: {"output_file": m["ligand_file"]}
                   for m in molecules}
    affinity_rows = {m["ligand_file"]: {"affinity": m["affinity"]}
                     for m in molecules}
    pdb, chain = "mock://pdb/6vkv.pdb", "mock://pdb/6vkv_chainA.pdb"
    fixed, receptor = "mock://pdb/6vkv_fixed.pdb", "mock://pdb/6vkv_receptor.pdbqt"

    prop_filter_expr = ('[items[i] for i in range(len(items)) '
                        'if qed_metrics[i]["qed"] >= min_qed '
                        'and admet_metrics[i]["LD50_Zhu"] >= min_ld50]')
    hit_filter_expr = ('[items[i] for i in range(len(items)) '
                       'if docking_results[i]["affinity"] <= max_affinity]')

    tools = [
        tool("calculate_mol_drug_chemistry", "molecule.property",
             "Computes QED drug-likeness scores for a SMILES list.",
             [field("smiles_list", "array")],
             [field("metrics", "array")],
             latency=20, cost=0.5, risk=0.01,
             behavior={"kind": "table", "key_param": "smiles_list",
                       "rows": qed_rows,
                       "per_item": {"collect_as": "metrics",
                                    "include_key_as": "smiles"}}),
        tool("pred_molecule_admet", "molecule.property",
             "Predicts ADMET properties (LD50) for a SMILES list.",
             [field("smiles_list", "array")],
             [field("admet_preds", "array")],
             latency=40, cost=1.0, risk=0.02,
             behavior={"kind": "table", "key_param": "smiles_list",
                       "rows": ld50_rows,
                       "per_item": {"collect_as": "admet_preds",
                                    "include_key_as": "smiles"}}),
        tool("filter_mol_candidates", "data.filter.properties",
             "Keeps molecules meeting QED and LD50 thresholds.",
             [field("items", "array"), field("qed_metrics", "array"),
              field("admet_metrics", "array"), field("min_qed", "number"),
              field("min_ld50", "number")],
             [field("selected", "array"), field("count", "number")],
             latency=5, cost=0.1, risk=0.0,
             behavior={"kind": "expression",
                       "outputs": {"selected": prop_filter_expr,
                                   "count": f"len({prop_filter_expr})"}}),
        tool("retrieve_protein_data_by_pdbcode", "protein.structure",
             "Downloads a protein structure by PDB code.",
             [field("pdb_code", "string")],
             [field("pdb_path", "uri")],
             latency=30, cost=0.2, risk=0.02,
             behavior={"kind": "table", "key_param": "pdb_code",
                       "rows": {"6vkv": {"pdb_path": pdb}}}),
        tool("save_main_chain_pdb", "protein.chain_extract",
             "Extracts the main chain (default chain A) from a PDB file.",
             [field("pdb_file_path", "uri"),
              field("main_chain_id", "string", required=False)],
             [field("out_file", "uri")],
             latency=10, cost=0.2, risk=0.01,
             behavior={"kind": "table", "key_param": "pdb_file_path",
                       "rows": {pdb: {"out_file": chain}}}),
        tool("fix_pdb_dock", "protein.repair",
             "Repairs missing or inconsistent regions in a PDB structure.",
             [field("pdb_file_path", "uri")],
             [field("fix_pdb_file_path", "uri")],
             latency=25, cost=0.5, risk=0.02,
             behavior={"kind": "table", "key_param": "pdb_file_path",
                       "rows": {chain: {"fix_pdb_file_path": fixed}}}),
        tool("run_fpocket", "protein.pocket_detect",
             "Detects binding pockets; exposes the best pocket's box.",
             [field("pdb_file_path", "uri")],
             [field("pockets", "array"), field("center_x", "number"),
              field("center_y", "number"), field("center_z", "number"),
              field("size_x", "number"), field("size_y", "number"),
              field("size_z", "number")],
             latency=35, cost=1.0, risk=0.02,
             behavior={"kind": "table", "key_param": "pdb_file_path",
                       "rows": {fixed: {
                           "pockets": [
                               {"name": "pocket_1", "score": 0.87,
                                "center_x": 12.4, "center_y": -3.1,
                                "center_z": 24.8, "size_x": 18.0,
                                "size_y": 18.0, "size_z": 18.0},
                               {"name": "pocket_2", "score": 0.41,
                                "center_x": -8.0, "center_y": 6.2,
                                "center_z": 11.3, "size_x": 14.0,
                                "size_y": 14.0, "size_z": 14.0}],
                           "center_x": 12.4, "center_y": -3.1,
                           "center_z": 24.8, "size_x": 18.0,
                           "size_y": 18.0, "size_z": 18.0}}}),
        tool("convert_smiles_to_format", "chem.format_convert",
             "Converts SMILES strings into 3D ligand files (pdbqt).",
             [field("inputs", "array"), field("target_format", "string",
                                              constraints={"enum": ["pdbqt"]})],
             [field("convert_results", "array"),
              field("output_files", "array")],
             latency=15, cost=0.3, risk=0.01,
             behavior={"kind": "table", "key_param": "inputs",
                       "rows": ligand_rows,
                       "per_item": {"collect_as": "convert_results",
                                    "include_key_as": "input",
                                    "pluck": {"output_files": "output_file"}}}),
        tool("convert_pdb_to_pdbqt_dock", "protein.format_convert",
             "Converts a repaired receptor PDB into PDBQT.",
             [field("pdb_file_path", "uri")],
             [field("output_file", "uri")],
             latency=10, cost=0.2, risk=0.01,
             behavior={"kind": "table", "key_param": "pdb_file_path",
                       "rows": {fixed: {"output_file": receptor}}}),
        tool("quick_molecule_docking", "docking.engine",
             "Docks ligand files into a receptor box; reports affinities.",
             [field("receptor_path", "uri"), field("ligand_paths", "array"),
              field("center_x", "number"), field("center_y", "number"),
              field("center_z", "number"), field("size_x", "number"),
              field("size_y", "number"), field("size_z", "number")],
             [field("docking_results", "array")],
             latency=60, cost=2.0, risk=0.05,
             behavior={"kind": "table", "key_param": "ligand_paths",
                       "rows": affinity_rows,
                       "per_item": {"collect_as": "docking_results",
                                    "include_key_as": "ligand"}}),
        tool("filter_docking_hits", "data.filter.affinity",
             "Keeps molecules whose docking affinity beats a threshold.",
             [field("items", "array"), field("docking_results", "array"),
              field("max_affinity", "number")],
             [field("selected", "array"), field("count", "number")],
             latency=5, cost=0.1, risk=0.0,
             behavior={"kind": "expression",
                       "outputs": {"selected": hit_filter_expr,
                                   "count": f"len({hit_filter_expr})"}}),
    ]
    return {"name": "molecule-screening-lab", "tools": tools}


def wet_lab_fixture() -> dict:
    tools = [
        tool("stage_reagents", "data.stage",
             "Reserves and stages a reagent batch for a protocol run.",
             [field("protocol_id", "string")],
             [field("batch_id", "string")],
             latency=20, cost=1.0, risk=0.02, side_effect="data_write",
             reversible=True,
             compensation={"tool_id": "discard_reagents",
                           "param_map": {"batch_id": "batch_id"}},
             behavior={"kind": "expression",
                       "outputs": {"batch_id": "'batch-' + protocol_id"}}),
        tool("discard_reagents", "data.cleanup",
             "Returns a staged reagent batch to stock.",
             [field("batch_id", "string")],
             [field("discarded", "boolean")],
             latency=10, cost=0.2, risk=0.0, side_effect="data_write",
             behavior={"kind": "script_step", "op": "discard",
                       "outputs": {"discarded": True}}),
        tool("load_sample_plate", "device.liquid_handler",
             "Robotic liquid handler: loads a sample plate.",
             [field("batch_id", "string")],
             [field("plate_id", "string")],
             latency=80, cost=3.0, risk=0.08, side_effect="physical",
             scopes=("wet.execute",),
             behavior={"kind": "expression",
                       "outputs": {"plate_id": "'plate-' + batch_id"}}),
        tool("run_thermocycle", "device.thermocycler",
             "Thermocycler: runs the configured temperature program.",
             [field("plate_id", "string"),
              field("cycles", "number", constraints={"min": 1, "max": 99})],
             [field("status", "string")],
             latency=200, cost=5.0, risk=0.1, side_effect="physical",
             scopes=("wet.execute",),
             behavior={"kind": "script_step", "op": "thermocycle",
                       "outputs": {"status": "cycled"}}),
        tool("read_plate_absorbance", "device.plate_reader",
             "Plate reader: measures absorbance per well.",
             [field("plate_id", "string")],
             [field("absorbance", "array")],
             latency=60, cost=2.0, risk=0.05, side_effect="physical",
             scopes=("wet.execute",),
             behavior={"kind": "script_step", "op": "read_plate",
                       "outputs": {"absorbance": [0.12, 0.43, 0.98, 0.77]}}),
    ]
    return {"name": "wet-bench-lab", "tools": tools}


def node(node_id, tool_id, capability, params, depends_on=(),
         on_failure="abort"):
    return {"node_id": node_id, "tool_id": tool_id,
            "capability_class": capability, "params": params,
            "expected_outputs": [], "depends_on": list(depends_on),
            "on_failure": on_failure}


def templates() -> dict[str, dict]:
    screen_nodes = [
        node("s01_properties", "calculate_mol_drug_chemistry",
             "molecule.property", {"smiles_list": "$config:smiles_list"}),
        node("s02_admet", "pred_molecule_admet", "molecule.property",
             {"smiles_list": "$config:smiles_list"}),
        node("s03_filter", "filter_mol_candidates", "data.filter.properties",
             {"items": "$config:smiles_list",
              "qed_metrics": "$ref:s01_properties.metrics",
              "admet_metrics": "$ref:s02_admet.admet_preds",
              "min_qed": 0.6, "min_ld50": 3.0},
             depends_on=["s01_properties", "s02_admet"]),
    ]
    prep_nodes = [
        node("s04_fetch_structure", "retrieve_protein_data_by_pdbcode",
             "protein.structure", {"pdb_code": "$config:pdb_code"}),
        node("s05_main_chain", "save_main_chain_pdb", "protein.chain_extract",
             {"pdb_file_path": "$ref:s04_fetch_structure.pdb_path",
              "main_chain_id": ""},
             depends_on=["s04_fetch_structure"]),
        node("s06_repair", "fix_pdb_dock", "protein.repair",
             {"pdb_file_path": "$ref:s05_main_chain.out_file"},
             depends_on=["s05_main_chain"]),
        node("s07_pockets", "run_fpocket", "protein.pocket_detect",
             {"pdb_file_path": "$ref:s06_repair.fix_pdb_file_path"},
             depends_on=["s06_repair"]),
    ]

    def docking_nodes(ligand_source_node, ligand_items):
        return [
            node("s08_ligand_prep", "convert_smiles_to_format",
                 "chem.format_convert",
                 {"inputs": ligand_items, "target_format": "pdbqt"},
                 depends_on=[ligand_source_node] if ligand_source_node else []),
            node("s09_receptor_prep", "convert_pdb_to_pdbqt_dock",
                 "protein.format_convert",
                 {"pdb_file_path": "$ref:s06_repair.fix_pdb_file_path"},
                 depends_on=["s06_repair"]),
            node("s10_docking", "@docking.engine", "docking.engine",
                 {"receptor_path": "$ref:s09_receptor_prep.output_file",
                  "ligand_paths": "$ref:s08_ligand_prep.output_files",
                  "center_x": "$ref:s07_pockets.center_x",
                  "center_y": "$ref:s07_pockets.center_y",
                  "center_z": "$ref:s07_pockets.center_z",
                  "size_x": "$ref:s07_pockets.size_x",
                  "size_y": "$ref:s07_pockets.size_y",
                  "size_z": "$ref:s07_pockets.size_z"},
                 depends_on=["s07_pockets", "s08_ligand_prep",
                             "s09_receptor_prep"]),
        ]

    funnel = {
        "template_id": "molecule-screening-docking",
        "goal_tags": ["admet", "docking", "drug-discovery", "screening"],
        "description": "Screen a SMILES library by QED/LD50, prepare the "
                       "receptor, dock survivors, keep high-affinity hits.",
        "nodes": screen_nodes + prep_nodes + docking_nodes(
            "s03_filter", "$ref:s03_filter.selected") + [
            node("s11_hit_selection", "filter_docking_hits",
                 "data.filter.affinity",
                 {"items": "$ref:s03_filter.selected",
                  "docking_results": "$ref:s10_docking.docking_results",
                  "max_affinity": -7.0},
                 depends_on=["s03_filter", "s10_docking"]),
        ],
    }
    property_screen = {
        "template_id": "molecule-property-screen",
        "goal_tags": ["admet", "drug-discovery", "screening"],
        "description": "Property evaluation and threshold filtering only.",
        "nodes": screen_nodes,
    }
    pocket_prep = {
        "template_id": "protein-pocket-prep",
        "goal_tags": ["docking", "drug-discovery", "protein-prep"],
        "description": "Fetch, clean, and pocket-annotate a receptor.",
        "nodes": prep_nodes,
    }
    quick_docking = {
        "template_id": "quick-docking",
        "goal_tags": ["docking", "drug-discovery"],
        "description": "Dock an entire SMILES list without property screening.",
        "nodes": prep_nodes + docking_nodes(None, "$config:smiles_list"),
    }
    wet_validation = {
        "template_id": "wet-protocol-validation",
        "goal_tags": ["synthesis", "validation", "wet-lab"],
        "description": "Stage reagents, run a thermocycle program, read the "
                       "plate; staged reagents are compensable.",
        "nodes": [
            node("w01_stage", "stage_reagents", "data.stage",
                 {"protocol_id": "$config:protocol_id"}),
            node("w02_load", "load_sample_plate", "device.liquid_handler",
                 {"batch_id": "$ref:w01_stage.batch_id"},
                 depends_on=["w01_stage"], on_failure="rollback"),
            node("w03_cycle", "run_thermocycle", "device.thermocycler",
                 {"plate_id": "$ref:w02_load.plate_id", "cycles": 30},
                 depends_on=["w02_load"], on_failure="rollback"),
            node("w04_read", "read_plate_absorbance", "device.plate_reader",
                 {"plate_id": "$ref:w02_load.plate_id"},
                 depends_on=["w02_load", "w03_cycle"], on_failure="rollback"),
        ],
    }
    return {
        "molecule_screening_docking": funnel,
        "molecule_property_screen": property_screen,
        "protein_pocket_prep": pocket_prep,
        "quick_docking": quick_docking,
        "wet_protocol_validation": wet_validation,
    }


def main() -> None:
    molecules = build_molecules()
    check(molecules)
    fixtures_dir = DATA / "fixtures"
    templates_dir = DATA / "templates"
    fixtures_dir.mkdir(parents=True, exist_ok=True)
    templates_dir.mkdir(parents=True, exist_ok=True)

    screening = screening_fixture(molecules)
    (fixtures_dir / "molecule_screening.json").write_text(
        canonical.dumps(screening) + "\n")
    (fixtures_dir / "wet_lab.json").write_text(
        canonical.dumps(wet_lab_fixture()) + "\n")
    (fixtures_dir / "screening_inputs.json").write_text(canonical.dumps({
        "smiles_list": [m["smiles"] for m in molecules],
        "pdb_code": "6vkv",
    }) + "\n")
    for name, template in templates().items():
        (templates_dir / f"{name}.json").write_text(
            canonical.dumps(template) + "\n")
    print(f"wrote {fixtures_dir} and {templates_dir}")


if __name__ == "__main__":
    main()
