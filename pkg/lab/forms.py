import math

from django import forms
from django.conf import settings

from lab.initial_data import ProfileShape, RecipeKind
from lab.solver import STRAIN_FORMS

MAX_SEED = 2**64 - 1


EXPERIMENT_CHOICES = [
    ("linear_decay", "Linear decay"),
    ("simulate", "Simulate"),
    ("invariants", "Invariants"),
    ("weak_strong", "Weak-strong"),
    ("greens_dump", "Green's function dump"),
]


class FloatListField(forms.Field):
    """
    A list of floats. Accepts a TOML array or a comma separated string, so the
    same field reads presets and environment overrides.
    """

    def to_python(self, value):
        if value in self.empty_values:
            return []
        if isinstance(value, str):
            value = [part for part in value.split(",") if part.strip()]
        if not isinstance(value, (list, tuple)):
            raise forms.ValidationError("Expected a list of numbers")
        try:
            return [float(item) for item in value]
        except (TypeError, ValueError):
            raise forms.ValidationError("Expected a list of numbers")


class SectionForm(forms.Form):
    """
    Base class for the config sections. Subclasses list their defaults in
    `defaults()`, read from settings where a VISCOLAB_* value exists.
    """

    section = ""

    @classmethod
    def defaults(cls):
        return {}

    def _positive(self, name):
        value = self.cleaned_data.get(name)
        if value is not None and not value > 0:
            raise forms.ValidationError("Must be positive")
        return value


class ExperimentForm(SectionForm):
    section = "experiment"

    kind = forms.ChoiceField(choices=EXPERIMENT_CHOICES, required=False)
    label = forms.CharField(required=False, max_length=100)

    @classmethod
    def defaults(cls):
        return {"kind": "", "label": ""}


class GridForm(SectionForm):
    section = "grid"

    dim = forms.TypedChoiceField(choices=[(2, "2"), (3, "3")], coerce=int)
    N = forms.IntegerField(min_value=4)
    L = forms.FloatField()

    @classmethod
    def defaults(cls):
        return {"dim": 2, "N": 32, "L": 2 * math.pi}

    def clean_N(self):
        n = self.cleaned_data.get("N")
        if n % 2:
            raise forms.ValidationError("The number of points per axis must be even")
        return n

    def clean_L(self):
        return self._positive("L")


class PhysicsForm(SectionForm):
    section = "physics"

    mu = forms.FloatField()
    disc_eps = forms.FloatField()

    @classmethod
    def defaults(cls):
        return {
            "mu": getattr(settings, "VISCOLAB_MU", 1.0),
            "disc_eps": getattr(settings, "VISCOLAB_DISC_EPS", 1e-8),
        }

    def clean_mu(self):
        return self._positive("mu")

    def clean_disc_eps(self):
        return self._positive("disc_eps")


class RecipeForm(SectionForm):
    section = "recipe"

    kind = forms.ChoiceField(choices=RecipeKind.choices)
    delta = forms.FloatField()
    seed = forms.IntegerField(min_value=0, max_value=MAX_SEED)
    modes = forms.IntegerField(required=False, min_value=1)
    c0 = forms.FloatField(required=False, min_value=0)
    zeta = forms.FloatField()
    shape = forms.ChoiceField(choices=ProfileShape.choices)
    flow_time = forms.FloatField(min_value=0)
    ode_tol = forms.FloatField()
    strain_fraction = forms.FloatField()
    interp_tol = forms.FloatField()
    xi_floor = forms.FloatField()
    floor_slack = forms.FloatField(min_value=0, max_value=1)

    @classmethod
    def defaults(cls):
        return {
            "kind": RecipeKind.ZERO_STRAIN,
            "delta": 1e-2,
            "seed": 0,
            "modes": None,
            "c0": None,
            "zeta": 0.5,
            "shape": ProfileShape.GAUSSIAN,
            "flow_time": 1.0,
            "ode_tol": 1e-12,
            "strain_fraction": 0.5,
            "interp_tol": getattr(settings, "VISCOLAB_INTERP_TOL", 1e-10),
            "xi_floor": getattr(settings, "VISCOLAB_XI_FLOOR", 0.1),
            "floor_slack": getattr(settings, "VISCOLAB_FLOOR_SLACK", 0.05),
        }

    def clean_delta(self):
        return self._positive("delta")

    def clean_zeta(self):
        zeta = self.cleaned_data.get("zeta")
        if not 0 < zeta < 1:
            raise forms.ValidationError("zeta must lie strictly between 0 and 1")
        return zeta

    def clean_strain_fraction(self):
        fraction = self.cleaned_data.get("strain_fraction")
        if not 0 <= fraction < 1:
            raise forms.ValidationError("The strain fraction must lie in [0, 1)")
        return fraction

    def clean(self):
        cleaned_data = super().clean()
        shape = cleaned_data.get("shape")
        c0 = cleaned_data.get("c0")
        if shape == ProfileShape.HIGH_PASS and c0:
            self.add_error("c0", "A high-pass profile cannot carry a low-frequency floor")
        return cleaned_data


class SteppingForm(SectionForm):
    section = "stepping"

    dt = forms.FloatField()
    T = forms.FloatField(min_value=0)
    cadence = forms.IntegerField(min_value=1)
    nonlinear = forms.BooleanField(required=False)
    strain_form = forms.ChoiceField(choices=[(form, form) for form in STRAIN_FORMS])
    c_cfl = forms.FloatField()
    eps_u = forms.FloatField()
    blowup_factor = forms.FloatField()
    check_order = forms.BooleanField(required=False)
    monitor = forms.BooleanField(required=False)

    @classmethod
    def defaults(cls):
        return {
            "dt": 1e-2,
            "T": 1.0,
            "cadence": 10,
            "nonlinear": True,
            "strain_form": STRAIN_FORMS[0],
            "c_cfl": getattr(settings, "VISCOLAB_C_CFL", 0.5),
            "eps_u": getattr(settings, "VISCOLAB_EPS_U", 1e-12),
            "blowup_factor": getattr(settings, "VISCOLAB_BLOWUP_FACTOR", 10.0),
            "check_order": False,
            "monitor": False,
        }

    def clean_dt(self):
        return self._positive("dt")

    def clean_c_cfl(self):
        return self._positive("c_cfl")

    def clean_blowup_factor(self):
        factor = self.cleaned_data.get("blowup_factor")
        if not factor > 1:
            raise forms.ValidationError("The blow-up factor must exceed 1")
        return factor

    def clean(self):
        cleaned_data = super().clean()
        dt, T = cleaned_data.get("dt"), cleaned_data.get("T")
        if dt and T is not None and T > 0:
            steps = T / dt
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                self.add_error("T", f"T={T:g} is not a whole number of steps of dt={dt:g}")
        return cleaned_data


class QuadratureForm(SectionForm):
    section = "quadrature"

    order = forms.IntegerField(min_value=2, max_value=128)
    rel_tol = forms.FloatField()
    tail_tol = forms.FloatField()
    cutoff = forms.FloatField(required=False)
    window_lo = forms.FloatField()
    window_hi = forms.FloatField()
    t_min = forms.FloatField(min_value=0)
    t_max = forms.FloatField()
    samples = forms.IntegerField(min_value=2)
    alpha_max = forms.IntegerField(min_value=0, max_value=4)
    lower_bound = forms.BooleanField(required=False)
    lp = forms.FloatField(required=False, min_value=2)

    @classmethod
    def defaults(cls):
        window = getattr(settings, "VISCOLAB_WINDOW", (1e2, 1e4))
        return {
            "order": 16,
            "rel_tol": getattr(settings, "VISCOLAB_QUAD_REL_TOL", 1e-10),
            "tail_tol": getattr(settings, "VISCOLAB_TAIL_TOL", 1e-12),
            "cutoff": None,
            "window_lo": window[0],
            "window_hi": window[1],
            "t_min": window[0],
            "t_max": window[1],
            "samples": 41,
            "alpha_max": 1,
            "lower_bound": True,
            "lp": None,
        }

    def clean_rel_tol(self):
        return self._positive("rel_tol")

    def clean_tail_tol(self):
        return self._positive("tail_tol")

    def clean_cutoff(self):
        return self._positive("cutoff")

    def clean(self):
        cleaned_data = super().clean()
        lo, hi = cleaned_data.get("window_lo"), cleaned_data.get("window_hi")
        if lo is not None and hi is not None and not 0 < lo < hi:
            self.add_error("window_hi", "The fit window must satisfy 0 < window_lo < window_hi")
        t_min, t_max = cleaned_data.get("t_min"), cleaned_data.get("t_max")
        if t_min is not None and t_max is not None and not t_min < t_max:
            self.add_error("t_max", "t_max must exceed t_min")
        return cleaned_data


class TolerancesForm(SectionForm):
    section = "tolerances"

    tol_div = forms.FloatField(min_value=0)
    tol_energy = forms.FloatField(min_value=0)
    kappa_max = forms.FloatField(min_value=0)
    structural_factor = forms.FloatField(min_value=1)
    structural_floor = forms.FloatField(min_value=0)
    aliasing_tol = forms.FloatField(min_value=0)
    stability_factor = forms.FloatField(min_value=0)
    hodge_smallness = forms.FloatField(min_value=0)
    hodge_constant = forms.FloatField(min_value=0)
    hodge_ratio_tol = forms.FloatField(min_value=0)
    lyapunov_slack = forms.FloatField(min_value=0)
    energy_order_lo = forms.FloatField(min_value=0)
    energy_order_hi = forms.FloatField(min_value=0)
    rho = forms.FloatField()
    slope_tol = forms.FloatField(min_value=0)
    weighted_slope_tol = forms.FloatField(min_value=0)
    lp_tol = forms.FloatField(min_value=0)
    oracle_tol = forms.FloatField(min_value=0)

    @classmethod
    def defaults(cls):
        return {
            "tol_div": getattr(settings, "VISCOLAB_TOL_DIV", 1e-11),
            "tol_energy": getattr(settings, "VISCOLAB_TOL_ENERGY", 1e-6),
            "kappa_max": getattr(settings, "VISCOLAB_KAPPA_MAX", 0.1),
            "structural_factor": getattr(settings, "VISCOLAB_STRUCTURAL_FACTOR", 2.0),
            "structural_floor": getattr(settings, "VISCOLAB_STRUCTURAL_FLOOR", 1e-12),
            "aliasing_tol": getattr(settings, "VISCOLAB_ALIASING_TOL", 1e-10),
            "stability_factor": getattr(settings, "VISCOLAB_STABILITY_FACTOR", 4.4),
            "hodge_smallness": getattr(settings, "VISCOLAB_HODGE_SMALLNESS", 0.1),
            "hodge_constant": getattr(settings, "VISCOLAB_HODGE_CONSTANT", 1.0),
            "hodge_ratio_tol": getattr(settings, "VISCOLAB_HODGE_RATIO_TOL", 0.1),
            "lyapunov_slack": getattr(settings, "VISCOLAB_LYAPUNOV_SLACK", 1.0),
            "energy_order_lo": 3.4,
            "energy_order_hi": 4.6,
            "rho": getattr(settings, "VISCOLAB_RHO", 0.2),
            "slope_tol": getattr(settings, "VISCOLAB_SLOPE_TOL", 0.03),
            "weighted_slope_tol": getattr(settings, "VISCOLAB_WEIGHTED_SLOPE_TOL", 0.05),
            "lp_tol": 0.1,
            "oracle_tol": getattr(settings, "VISCOLAB_ORACLE_TOL", 1e-10),
        }

    def clean_rho(self):
        rho = self.cleaned_data.get("rho")
        if not 0 < rho <= 1:
            raise forms.ValidationError("rho must lie in (0, 1]")
        return rho

    def clean(self):
        cleaned_data = super().clean()
        lo, hi = cleaned_data.get("energy_order_lo"), cleaned_data.get("energy_order_hi")
        if lo is not None and hi is not None and lo > hi:
            self.add_error("energy_order_hi", "The order bounds are reversed")
        return cleaned_data


class WeakStrongForm(SectionForm):
    section = "weak_strong"

    mode = forms.ChoiceField(choices=[("same_data", "Same data"), ("perturbed", "Perturbed data")])
    epsilon = forms.FloatField(min_value=0)
    gronwall_slack = forms.FloatField(min_value=0)
    same_data_factor = forms.FloatField()
    order_lo = forms.FloatField(min_value=0)
    order_hi = forms.FloatField(min_value=0)
    check_order = forms.BooleanField(required=False)
    weak_trajectory = forms.CharField(required=False)

    @classmethod
    def defaults(cls):
        return {
            "mode": "same_data",
            "epsilon": 1e-4,
            "gronwall_slack": getattr(settings, "VISCOLAB_GRONWALL_SLACK", 0.1),
            "same_data_factor": getattr(settings, "VISCOLAB_SAME_DATA_FACTOR", 1e-6),
            "order_lo": 12.0,
            "order_hi": 20.0,
            "check_order": False,
            "weak_trajectory": "",
        }

    def clean_same_data_factor(self):
        return self._positive("same_data_factor")

    def clean(self):
        cleaned_data = super().clean()
        if cleaned_data.get("mode") == "perturbed" and not cleaned_data.get("epsilon"):
            self.add_error("epsilon", "A perturbed pair needs epsilon > 0")
        lo, hi = cleaned_data.get("order_lo"), cleaned_data.get("order_hi")
        if lo is not None and hi is not None and lo > hi:
            self.add_error("order_hi", "The order ratio bounds are reversed")
        return cleaned_data


class GreensForm(SectionForm):
    section = "greens"

    times = FloatListField()
    mus = FloatListField()
    xi_min = forms.FloatField()
    xi_max = forms.FloatField()
    xi_count = forms.IntegerField(min_value=2)
    low_band = forms.FloatField()
    low_t_max = forms.FloatField(min_value=0)
    low_tol = forms.FloatField(min_value=0)
    envelope_xi_factor = forms.FloatField()
    envelope_t_min = forms.FloatField(min_value=0)
    envelope_t_max = forms.FloatField()
    envelope_slack = forms.FloatField(min_value=0)

    @classmethod
    def defaults(cls):
        return {
            "times": [0.1, 1.0, 10.0],
            "mus": [0.5, 1.0, 2.0],
            "xi_min": 1e-3,
            "xi_max": 1e3,
            "xi_count": 50,
            "low_band": 0.05,
            "low_t_max": 50.0,
            "low_tol": 5e-3,
            "envelope_xi_factor": 10.0,
            "envelope_t_min": 0.5,
            "envelope_t_max": 5.0,
            "envelope_slack": 0.01,
        }

    def clean_times(self):
        times = self.cleaned_data.get("times")
        if not times or min(times) < 0:
            raise forms.ValidationError("Times must be a non-empty list of non-negative numbers")
        return times

    def clean_mus(self):
        mus = self.cleaned_data.get("mus")
        if not mus or min(mus) <= 0:
            raise forms.ValidationError("Viscosities must be a non-empty list of positive numbers")
        return mus

    def clean(self):
        cleaned_data = super().clean()
        lo, hi = cleaned_data.get("xi_min"), cleaned_data.get("xi_max")
        if lo is not None and hi is not None and not 0 < lo < hi:
            self.add_error("xi_max", "The frequency range must satisfy 0 < xi_min < xi_max")
        t_lo, t_hi = cleaned_data.get("envelope_t_min"), cleaned_data.get("envelope_t_max")
        if t_lo is not None and t_hi is not None and not t_lo < t_hi:
            self.add_error("envelope_t_max", "The envelope window is empty")
        band = cleaned_data.get("low_band")
        if band is not None and not 0 < band < 2:
            self.add_error("low_band", "The low band (in units of 1/mu) must lie in (0, 2)")
        return cleaned_data


class OutputForm(SectionForm):
    section = "output"

    directory = forms.CharField(required=False)
    snapshots = forms.BooleanField(required=False)
    trajectory = forms.CharField(required=False)
    restart = forms.CharField(required=False)

    @classmethod
    def defaults(cls):
        return {"directory": "", "snapshots": True, "trajectory": "", "restart": ""}


SECTION_FORMS = {
    form.section: form
    for form in (
        ExperimentForm,
        GridForm,
        PhysicsForm,
        RecipeForm,
        SteppingForm,
        QuadratureForm,
        TolerancesForm,
        WeakStrongForm,
        GreensForm,
        OutputForm,
    )
}
