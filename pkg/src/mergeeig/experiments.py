"""Experiment orchestration: site ranking, the twin/complement sweep and the
secure-computation and DP comparisons."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bayes_linear as bl
from . import causal_gp as gp
from .config import ExperimentConfig, IllustrativeConfig
from .data import (
    DgpConfig,
    SiteCollection,
    ihdp_surrogate,
    illustrative_host_selection,
    load_csv,
    make_sites,
    subsample,
    synth_rct,
    twin_complement,
    weighted_holdout,
)
from .dataset import TabularDataset
from .errors import MergeEigError
from .nested_mc import NmcConfig, conjugate_linear_sampler, eig_nmc, eig_rb, eig_theta_c_nmc
from .privacy import (
    DpParams,
    SensitivityInputs,
    clip_rows,
    dp_rank,
    exponential_select,
    sensitivity_linear_eig_tight,
)
from .ranking import BASELINES, baseline_scores, ground_truth_ranking, precision_at_k, rank_from_scores, spearman_rho


def _site_seeds(seed: int, K: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence([seed, 0x5EED]).spawn(K)]


def _map_sites(fn, items, workers: int, stage: str) -> list:
    """Order-preserving map; failures are re-raised naming the site and stage."""

    def run(pair):
        i, item = pair
        try:
            return fn(i, item)
        except MergeEigError as exc:
            raise type(exc)(f"site {i} ({stage}): {exc}") from exc

    pairs = list(enumerate(items))
    if workers <= 1:
        return [run(p) for p in pairs]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(run, pairs))


def load_source(cfg: ExperimentConfig) -> TabularDataset:
    src = cfg.sites.source
    if src == "ihdp_surrogate":
        return ihdp_surrogate(cfg.seed)
    return load_csv(src)


def build_sites(cfg: ExperimentConfig, source: TabularDataset) -> SiteCollection:
    s = cfg.sites
    return make_sites(source, s.K, s.host_size, s.size_range, s.min_per_arm, cfg.seed, s.max_retries, s.coef_scale)


# -- model adapters ---------------------------------------------------------
@dataclass
class LinearModel:
    fm: bl.FeatureMap
    post: bl.GaussianPosterior
    cfg: ExperimentConfig

    def refit(self, train: TabularDataset):
        p = bl.fit(self.fm, train, self.cfg.sigma2, self.cfg.prior_precision)
        return lambda X: bl.cate_predict(p, self.fm, X)

    def closed(self, cand: TabularDataset) -> float:
        if self.cfg.target == "full":
            return bl.eig_theta(self.post, self.fm, cand)
        fn = bl.eig_theta_c_block if self.cfg.cate_form == "block" else bl.eig_theta_c_exact
        return fn(self.post, self.fm, cand)

    def score(self, i: int, cand: TabularDataset, seed: int) -> float:
        est = self.cfg.estimator
        if est in ("closed_full", "closed_cate"):
            return self.closed(cand)
        sampler = conjugate_linear_sampler(self.post, self.fm)
        ncfg = NmcConfig(self.cfg.nmc.N, self.cfg.nmc.M1, seed=seed)
        fn = {"nmc": eig_nmc, "rb": eig_rb, "nmc_cate": eig_theta_c_nmc}[est]
        return fn(sampler, cand, ncfg).value


@dataclass
class GpModel:
    params: gp.LmcKernelParams
    state: gp.GpPosteriorState
    X0: np.ndarray
    cfg: ExperimentConfig

    def refit(self, train: TabularDataset):
        # re-tune from the host optimum on every merge
        _, state = gp.fit_host(self.params, train, self.cfg.gp.max_iters, 1, self.cfg.seed)
        return state.predict_cate

    def score(self, i: int, cand: TabularDataset, seed: int) -> float:
        if self.cfg.estimator == "closed_full":
            return gp.eig_f(self.state, cand)
        return gp.eig_tau_x0(self.state, cand, self.X0)


def fit_model(cfg: ExperimentConfig, host: TabularDataset):
    if cfg.model == "polynomial":
        fm = bl.FeatureMap.polynomial(host.d, cfg.degree)
        return LinearModel(fm, bl.fit(fm, host, cfg.sigma2, cfg.prior_precision), cfg)
    g = cfg.gp
    init = gp.LmcKernelParams.default(host.d, lengthscale_sq=g.lengthscale_sq * host.d, noise=g.noise)
    params, state = gp.fit_host(init, host, g.max_iters, g.restarts, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 0x70])
    X0 = host.X[np.sort(rng.choice(host.n, min(g.X0_size, host.n), replace=False))]
    return GpModel(params, state, X0, cfg)


# -- ranking experiment -----------------------------------------------------
@dataclass
class RankingReport:
    config: dict
    scores: np.ndarray
    ranking: np.ndarray
    truth_pehe: np.ndarray
    truth_ranking: np.ndarray
    rho: float
    p_at_k: dict
    baselines: dict
    runtime: dict
    noised: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "config": self.config,
                "scores": self.scores,
                "noised": self.noised,
                "ranking": self.ranking,
                "truth_pehe": self.truth_pehe,
                "truth_ranking": self.truth_ranking,
                "rho": self.rho,
                "p_at_k": self.p_at_k,
                "baselines": self.baselines,
                "runtime": self.runtime,
                "extra": self.extra,
            }
        )


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, np.generic):
        return v.item()
    return v


def _eig_sensitivity(cfg: ExperimentConfig, fm: bl.FeatureMap) -> float:
    """One-row sensitivity of the EIG, half that of the log-det statistic."""
    d = fm.p if cfg.target == "full" else fm.p_c
    inp = SensitivityInputs(max(cfg.privacy_params.M_clip, 1.0), d, cfg.prior_precision)
    return 0.5 * sensitivity_linear_eig_tight(inp)


def _mpc_scores(model: LinearModel, cands, seeds, cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray, float]:
    """Secure statistics per site, revealed plain and with final Laplace noise."""
    from .mpc.network import PartyNetwork
    from .mpc.shares import reveal

    pp = cfg.privacy_params
    fm = model.fm
    scale = DpParams(pp.epsilon, _eig_sensitivity(cfg, fm), pp.accounting, len(cands)).laplace_scale

    def one(i, cand):
        with PartyNetwork(2, seed=seeds[i]) as net:
            shared = bl.eig_theta_shared(model.post, fm, cand, net, target=cfg.target)
            plain = reveal(shared, net)
            noised = reveal(shared, net, noise_scale=scale)
        return plain, noised

    out = _map_sites(one, cands, cfg.workers, "secure scoring")
    return np.array([o[0] for o in out]), np.array([o[1] for o in out]), scale


def _exponential_ranking(values: np.ndarray, sensitivity: float, cfg: ExperimentConfig, seed: int) -> np.ndarray:
    """Rank by repeated exponential-mechanism selection without replacement."""
    pp = cfg.privacy_params
    dp = DpParams(pp.epsilon, sensitivity, pp.accounting, len(values))
    left = list(range(len(values)))
    order = []
    streams = np.random.SeedSequence([seed, 0xE4]).spawn(len(values))
    for s in streams:
        j = exponential_select(values[left], dp, s)
        order.append(left.pop(j))
    return np.array(order)


def score_candidates(cfg: ExperimentConfig, model, sites: SiteCollection) -> dict:
    seeds = _site_seeds(cfg.seed, len(sites.candidates))
    cands = sites.candidates
    out: dict = {}
    if cfg.privacy == "none":
        out["scores"] = np.array(_map_sites(lambda i, c: model.score(i, c, seeds[i]), cands, cfg.workers, "scoring"))
        out["ranking"] = rank_from_scores(out["scores"])
        return out
    pp = cfg.privacy_params
    clipped = [clip_rows(c, pp.M_clip) for c in cands]
    if cfg.privacy == "dp":
        r = dp_rank(cands, model.post, model.fm, pp.epsilon, pp.M_clip, cfg.prior_precision, cfg.seed, cfg.target, pp.accounting)
        out.update(scores=r.plain, noised=r.noised, ranking=r.ranking, laplace_scale=r.laplace_scale)
        return out
    plain, noised, scale = _mpc_scores(model, clipped, seeds, cfg)
    out.update(scores=plain, noised=noised, laplace_scale=scale)
    if pp.mechanism == "exponential":
        out["ranking"] = _exponential_ranking(plain, _eig_sensitivity(cfg, model.fm), cfg, cfg.seed)
        out["noised"] = None
    else:
        out["ranking"] = rank_from_scores(noised)
    return out


def run_ranking(cfg: ExperimentConfig, source: TabularDataset | None = None) -> RankingReport:
    """Build sites, score them, retrain on every merge and compare rankings."""
    t0 = time.perf_counter()
    source = load_source(cfg) if source is None else source
    sites = build_sites(cfg, source)
    host = sites.host
    if cfg.privacy != "none":
        host = clip_rows(host, cfg.privacy_params.M_clip)
    holdout = weighted_holdout(source, sites.host_selection, cfg.holdout_size, cfg.seed)
    t1 = time.perf_counter()
    model = fit_model(cfg, host)
    scored = score_candidates(cfg, model, sites)
    t2 = time.perf_counter()
    truths = [sites.unmasked(i) for i in range(len(sites.candidates))]
    gt_model = model if cfg.privacy == "none" else fit_model(cfg.replace(privacy="none"), sites.host)
    gt = ground_truth_ranking(sites.host, truths, gt_model.refit, holdout)
    t3 = time.perf_counter()

    K = len(sites.candidates)
    ranking = scored["ranking"]
    base = baseline_scores(sites.host, sites.candidates)
    baselines = {}
    for name in BASELINES:
        desc = cfg.prop_score_descending if name == "prop_score_error" else True
        r = rank_from_scores(base[name], descending=desc)
        baselines[name] = {"scores": base[name], "ranking": r, "rho": spearman_rho(r, gt.ranking)}
    extra = {"manifest": sites.manifest}
    if cfg.privacy != "none":
        plain_rank = rank_from_scores(scored["scores"])
        extra["rho_vs_plain"] = spearman_rho(ranking, plain_rank)
        extra["laplace_scale"] = scored["laplace_scale"]
    return RankingReport(
        config=cfg.to_dict(),
        scores=scored["scores"],
        noised=scored.get("noised"),
        ranking=ranking,
        truth_pehe=gt.pehe,
        truth_ranking=gt.ranking,
        rho=spearman_rho(ranking, gt.ranking),
        p_at_k={k: precision_at_k(ranking, gt.ranking, k) for k in cfg.ks if k <= K},
        baselines=baselines,
        runtime={"setup_s": t1 - t0, "scoring_s": t2 - t1, "ground_truth_s": t3 - t2},
        extra=extra,
    )


# -- twin / complement sweep ------------------------------------------------
COLUMNS = ("full", "targeted", "pehe")
NMC_COLUMNS = ("full_nmc", "targeted_nmc")


@dataclass
class IllustrativeReport:
    config: dict
    ratios: np.ndarray
    # differences are oriented so positive favors the twin
    diffs: dict
    regions: np.ndarray

    def summary(self) -> dict:
        return {
            name: {"mean": np.nanmean(v, axis=1), "sd": np.nanstd(v, axis=1)}
            for name, v in self.diffs.items()
            if not np.all(np.isnan(v))
        }

    def to_dict(self) -> dict:
        return _jsonable({"config": self.config, "ratios": self.ratios, "summary": self.summary(), "regions": self.regions})

    @property
    def has_region_2(self) -> bool:
        return bool(np.any(self.regions == 2))

    @property
    def extremes_ok(self) -> bool:
        return bool(self.regions[0] == 1 and self.regions[-1] == 3)


def classify_region(full: float, targeted: float, pehe: float) -> int:
    """1: all prefer the complement, 3: all prefer the twin, 2: full EIG
    prefers the twin while targeted EIG and PEHE prefer the complement, 0 otherwise."""
    signs = (full > 0, targeted > 0, pehe > 0)
    if signs == (False, False, False):
        return 1
    if signs == (True, True, True):
        return 3
    if signs == (True, False, False):
        return 2
    return 0


def _illustrative_seed(cfg: IllustrativeConfig, dgp: DgpConfig, k: int):
    s = cfg.seed * 100_003 + k
    S0, Sc = twin_complement(illustrative_host_selection())
    pool = synth_rct(dgp, cfg.pool_size, s)
    host = subsample(pool, S0, cfg.n_host, s)
    comp = subsample(pool, Sc, cfg.n_comp, s + 1)
    hold = weighted_holdout(pool, S0, cfg.holdout_size, s)
    return s, S0, pool, host, comp, hold


def run_illustrative(cfg: IllustrativeConfig, dgp: DgpConfig | None = None) -> IllustrativeReport:
    """Twin-versus-complement sweep over ``n_twin / n_comp``.

    The host and the complement come from one pool per seed; each ratio
    draws its own twin from the host selection. PEHE uses a holdout drawn
    from the host distribution.
    """
    dgp = DgpConfig.illustrative() if dgp is None else dgp
    R, S = len(cfg.ratios), cfg.seeds
    names = COLUMNS + NMC_COLUMNS
    diffs = {n: np.full((R, S), np.nan) for n in names}
    fm = bl.FeatureMap.polynomial(len(dgp.covariates))
    for k in range(S):
        s, S0, pool, host, comp, hold = _illustrative_seed(cfg, dgp, k)
        post = bl.fit(fm, host, cfg.sigma2, cfg.prior_precision)

        def pehe_of(cand):
            p = bl.fit(fm, host.concat(cand), cfg.sigma2, cfg.prior_precision)
            return bl.pehe(bl.cate_predict(p, fm, hold.X), hold.tau)

        comp_vals = (bl.eig_theta(post, fm, comp), bl.eig_theta_c_exact(post, fm, comp), pehe_of(comp))
        use_nmc = k < cfg.nmc_seeds
        if use_nmc:
            sampler = conjugate_linear_sampler(post, fm)
            ncfg = NmcConfig(cfg.nmc.N, cfg.nmc.M1, seed=s)
            comp_nmc = (eig_nmc(sampler, comp, ncfg).value, eig_theta_c_nmc(sampler, comp, ncfg).value)
        for r, ratio in enumerate(cfg.ratios):
            twin = subsample(pool, S0, int(round(ratio * cfg.n_comp)), s + 2 + r)
            diffs["full"][r, k] = bl.eig_theta(post, fm, twin) - comp_vals[0]
            diffs["targeted"][r, k] = bl.eig_theta_c_exact(post, fm, twin) - comp_vals[1]
            diffs["pehe"][r, k] = comp_vals[2] - pehe_of(twin)
            if use_nmc:
                diffs["full_nmc"][r, k] = eig_nmc(sampler, twin, ncfg).value - comp_nmc[0]
                diffs["targeted_nmc"][r, k] = eig_theta_c_nmc(sampler, twin, ncfg).value - comp_nmc[1]
    means = {n: diffs[n].mean(axis=1) for n in COLUMNS}
    regions = np.array([classify_region(means["full"][r], means["targeted"][r], means["pehe"][r]) for r in range(R)])
    return IllustrativeReport(cfg.to_dict(), np.asarray(cfg.ratios, dtype=float), diffs, regions)


# -- privacy comparisons ----------------------------------------------------
@dataclass
class PrivacyBench:
    mode: str
    plain: np.ndarray
    revealed: np.ndarray
    noised: np.ndarray
    mse: float
    rho_pre_noise: float
    rho_noised: float
    laplace_scale: float
    seconds: float

    def to_dict(self) -> dict:
        return _jsonable(self.__dict__)


def _privacy_setup(cfg: ExperimentConfig, source: TabularDataset | None):
    source = load_source(cfg) if source is None else source
    sites = build_sites(cfg, source)
    M = cfg.privacy_params.M_clip
    fm = bl.FeatureMap.polynomial(source.d, cfg.degree)
    post = bl.fit(fm, clip_rows(sites.host, M), cfg.sigma2, cfg.prior_precision)
    return sites, fm, post


def _plain_statistic(post, fm, cand, target):
    return bl.eig_theta(post, fm, cand) if target == "full" else bl.eig_theta_c_block(post, fm, cand)


def run_mpc_bench(cfg: ExperimentConfig, source: TabularDataset | None = None) -> PrivacyBench:
    """Secure statistic against plaintext on clipped sites, before and after final noising."""
    if cfg.privacy != "mpc":
        cfg = cfg.replace(privacy="mpc")
    t0 = time.perf_counter()
    sites, fm, post = _privacy_setup(cfg, source)
    M = cfg.privacy_params.M_clip
    clipped = [clip_rows(c, M) for c in sites.candidates]
    plain = np.array([_plain_statistic(post, fm, c, cfg.target) for c in clipped])
    model = LinearModel(fm, post, cfg)
    revealed, noised, scale = _mpc_scores(model, clipped, _site_seeds(cfg.seed, len(clipped)), cfg)
    base = rank_from_scores(plain)
    return PrivacyBench(
        "mpc",
        plain,
        revealed,
        noised,
        float(np.mean((revealed - plain) ** 2)),
        spearman_rho(rank_from_scores(revealed), base),
        spearman_rho(rank_from_scores(noised), base),
        scale,
        time.perf_counter() - t0,
    )


def run_dp_compare(cfg: ExperimentConfig, source: TabularDataset | None = None) -> PrivacyBench:
    """Laplace-noised plaintext statistics at the published sensitivity."""
    t0 = time.perf_counter()
    sites, fm, post = _privacy_setup(cfg, source)
    pp = cfg.privacy_params
    r = dp_rank(sites.candidates, post, fm, pp.epsilon, pp.M_clip, cfg.prior_precision, cfg.seed, cfg.target, pp.accounting)
    base = rank_from_scores(r.plain)
    return PrivacyBench(
        "dp",
        r.plain,
        r.plain,
        r.noised,
        float(np.mean((r.noised - r.plain) ** 2)),
        1.0,
        spearman_rho(r.ranking, base),
        0.5 * r.laplace_scale,
        time.perf_counter() - t0,
    )


def privacy_config(K: int = 20, seed: int = 0, **changes) -> ExperimentConfig:
    """Defaults for the secure-versus-DP comparison: targeted linear statistic,
    20 sites, weak prior ``c = 1e-3`` and clipping at ``M = 5``."""
    from .config import SiteConfig

    base = ExperimentConfig(estimator="closed_cate", privacy="mpc", seed=seed, prior_precision=1e-3, sites=SiteConfig(K=K))
    return base.replace(**changes)

