"""Every controller on one road: the full comparison table.

Runs the fixed-weight ladder, the auto-tuned and pre-tuned horizon
controllers, the PI baseline and the global-optimum replay on an unseen road,
then prints the comparison the way the reporting command does.  The predictor
is trained on a different road, so this is a generalization test.
"""

from ecocruise.dp import DpConfig, solve as dp_solve
from ecocruise.harness import Artifacts, pareto_sweep, write_sweep_csv
from ecocruise.invopt import gamma_series
from ecocruise.net import TrainConfig, make_dataset, train
from ecocruise.road import gen_sinusoidal
from ecocruise.vehicle import VehicleParams, linearize

params = VehicleParams()
v_ref = 30.0
lin = linearize(params, v_ref)

print("training the weight predictor on road seed 101...")
train_road = gen_sinusoidal(seed=101, length_m=30000.0)
train_dp = dp_solve(params, train_road, DpConfig.default(params, v_ref, dvavg=0.05))
train_series = gamma_series(train_dp, train_road, lin, params, 60, v_ref=v_ref)
model, _ = train(make_dataset(train_road, train_series, v_ref), TrainConfig(epochs=600, seed=3))

print("evaluating on unseen road seed 13...")
road = gen_sinusoidal(seed=13, length_m=15000.0)
solution = dp_solve(params, road, DpConfig.default(params, v_ref, dvavg=0.05))
series = gamma_series(solution, road, lin, params, 60, v_ref=v_ref)

ladder = [0.0005, 0.001, 0.002, 0.003, 0.005, 0.008]
rows = pareto_sweep(
    road, params, ladder,
    Artifacts(model=model, series=series, dp_solution=solution, lin=lin),
    v_ref,
)

print(f"\n{'controller':<12} {'weight':>8} {'avg v':>8} {'economy':>9} {'fuel kg':>9} {'step ms':>8}")
for r in rows:
    w = f"{r.gamma:.4f}" if r.gamma is not None else "-"
    if r.error:
        print(f"{r.controller:<12} failed: {r.error}")
        continue
    print(f"{r.controller:<12} {w:>8} {r.avg_velocity_mps:>8.3f} "
          f"{r.fuel_economy_km_per_kg:>9.3f} {r.total_fuel_kg:>9.4f} "
          f"{r.median_step_s * 1e3:>8.1f}")

pi = next(r for r in rows if r.controller == "PI")
for name in ("DP_REPLAY", "AT_MPC", "PT_MPC"):
    row = next(r for r in rows if r.controller == name)
    gain = 100 * (row.fuel_economy_km_per_kg / pi.fuel_economy_km_per_kg - 1)
    print(f"{name} fuel economy vs PI: {gain:+.2f}%")

write_sweep_csv(rows, "faceoff_sweep.csv", header_lines=["demo 05 export"])
print("\nwrote faceoff_sweep.csv")
