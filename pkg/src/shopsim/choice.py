"""Four-stage customer decision model.

Stage order per simulated step: store visit -> per-category purchase ->
product choice within category -> purchase quantity. Product utility feeds
every stage; category and store preference scores are logsumexp aggregations
of the utilities below them.

All sampling is inverse-transform from uniforms so that one customer-step
consumes a fixed block of ``1 + 3 * n_categories`` draws regardless of the
outcome. That makes trajectories replayable from stream positions and makes
batched and per-customer execution bitwise identical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .catalog import Catalog, CustomerPopulation

logger = logging.getLogger(__name__)

# Inverse-transform Poisson switches to a normal approximation above this rate.
_POISSON_NORMAL_SWITCH = 30.0


def draws_per_step(n_categories: int) -> int:
    """Uniform draws one customer consumes per simulated step."""
    return 1 + 3 * n_categories


@dataclass
class CustomerState:
    """Lagged per-customer quantities entering the next step's visit stage."""

    t: int = 1                      # index of the next step to simulate
    prev_visited: int = 0           # realized visit indicator of step t-1
    prev_visit_prob: float = 1.0    # visit probability used at step t-1
    prev_store_score: float = 0.0   # store preference score at step t-1
    prev_quantities: dict[int, int] = field(default_factory=dict)  # product -> qty


@dataclass
class PurchaseOutcome:
    """Realized outcome of one customer-step."""

    visited: bool
    categories: np.ndarray    # (k,) purchased category ids
    products: np.ndarray      # (k,) chosen product ids
    quantities: np.ndarray    # (k,) quantities >= 1
    unit_prices: np.ndarray   # (k,) effective prices paid
    revenue: float
    redeemed_discount: float  # coupon fraction if anything was bought, else 0


# --- stagewise operations ---------------------------------------------------

def product_utility(beta_x: float, beta_z: float, beta_w: float,
                    features: np.ndarray, z: np.ndarray,
                    price_factor: np.ndarray, price: np.ndarray) -> np.ndarray:
    """Utility of each product for one customer at given effective prices.

    The randomness lives in the coefficient draws; given coefficients this is
    deterministic: beta_x*X + beta_z*Z + (beta_w*price_factor)*log(price).
    """
    price = np.asarray(price, dtype=np.float64)
    if np.any(price <= 0.0):
        raise ValueError("effective prices must be > 0")
    return beta_x * features + beta_z * z + (beta_w * price_factor) * np.log(price)


def logsumexp_1d(values: np.ndarray) -> float:
    """Max-shifted logsumexp of a nonempty vector."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("logsumexp of an empty set")
    m = values.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(values - m))))


def category_score(utilities: np.ndarray) -> float:
    """Category preference score: logsumexp over the category's products."""
    return logsumexp_1d(utilities)


def store_score(category_scores: np.ndarray) -> float:
    """Store preference score: logsumexp over category scores."""
    return logsumexp_1d(category_scores)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def store_visit_prob(state: CustomerState, gamma0: float, gamma1: float,
                     gamma2: float, theta: float, x_store: float, t: int) -> float:
    """Auto-regressive visit probability; exactly 1 on the first step."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"inertia theta must be in [0,1], got {theta}")
    if t < 1:
        raise ValueError("step index starts at 1")
    if t == 1:
        return 1.0
    mu = gamma0 + state.prev_visited * gamma1 * state.prev_store_score + gamma2 * x_store
    return float((1.0 - theta) * sigmoid(mu) + theta * state.prev_visit_prob)


def category_purchase_prob(gamma0: float, gamma1: float, category_score: float) -> float:
    """Bernoulli purchase probability of a category given its score."""
    return float(sigmoid(gamma0 + gamma1 * category_score))


def product_choice_probs(utilities: np.ndarray) -> np.ndarray:
    """Multinomial-logit choice probabilities within one category."""
    utilities = np.asarray(utilities, dtype=np.float64)
    if utilities.size == 0:
        raise ValueError("empty choice set")
    shifted = np.exp(utilities - utilities.max())
    return shifted / shifted.sum()


def poisson_from_uniform(rate: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-transform Poisson draw per element.

    Exact CDF inversion below rate 30, normal approximation above (keeps the
    cost bounded while staying deterministic in ``u``).
    """
    rate = np.atleast_1d(np.asarray(rate, dtype=np.float64))
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    out = np.zeros(rate.shape, dtype=np.int64)

    big = rate >= _POISSON_NORMAL_SWITCH
    if np.any(big):
        z = ndtri(u[big])
        out[big] = np.maximum(0, np.rint(rate[big] + np.sqrt(rate[big]) * z)).astype(np.int64)

    small = ~big
    if np.any(small):
        lam = rate[small]
        target = u[small]
        pmf = np.exp(-lam)
        cdf = pmf.copy()
        k = np.zeros(lam.shape, dtype=np.int64)
        pending = cdf <= target
        i = 1
        # rate < 30 means the CDF crosses any u < 1 within ~130 terms
        while np.any(pending) and i < 160:
            pmf = np.where(pending, pmf * lam / i, pmf)
            cdf = np.where(pending, cdf + pmf, cdf)
            k = np.where(pending, i, k)
            pending = cdf <= target
            i += 1
        out[small] = k
    return out


def sample_quantity(qty_intercept: float, qty_slope: float, utility: float,
                    rng: np.random.Generator, max_rate: float = 1e3) -> int:
    """Shifted-Poisson quantity: 1 + Poisson(exp(intercept + slope*utility))."""
    rate = capped_rate(np.asarray([qty_intercept + qty_slope * utility]), max_rate)
    u = rng.random(1)
    return int(1 + poisson_from_uniform(rate, u)[0])


def capped_rate(log_rate: np.ndarray, max_rate: float) -> np.ndarray:
    rate = np.exp(np.minimum(log_rate, np.log(max_rate)))
    n_capped = int(np.count_nonzero(log_rate > np.log(max_rate)))
    if n_capped:
        logger.warning("quantity rate capped at %g for %d draw(s)", max_rate, n_capped)
    return rate


# --- batched kernel ---------------------------------------------------------

def _segment_logsumexp(mu: np.ndarray, starts: np.ndarray, counts: np.ndarray):
    """Row-wise logsumexp over contiguous column segments of ``mu``.

    Returns (scores, exp_shifted) where exp_shifted holds exp(mu - segmax),
    reused by the product-choice stage.
    """
    seg_max = np.maximum.reduceat(mu, starts, axis=-1)
    exp_shifted = np.exp(mu - np.repeat(seg_max, counts, axis=-1))
    seg_sum = np.add.reduceat(exp_shifted, starts, axis=-1)
    return seg_max + np.log(seg_sum), exp_shifted


@dataclass
class BatchState:
    """Vectorized :class:`CustomerState` for a batch of customers."""

    t: int
    prev_visited: np.ndarray      # (B,) int8
    prev_visit_prob: np.ndarray   # (B,)
    prev_store_score: np.ndarray  # (B,)
    prev_qty_rows: list[dict[int, int]]

    @classmethod
    def initial(cls, n: int) -> "BatchState":
        return cls(t=1, prev_visited=np.zeros(n, dtype=np.int8),
                   prev_visit_prob=np.ones(n), prev_store_score=np.zeros(n),
                   prev_qty_rows=[{} for _ in range(n)])

    def copy(self) -> "BatchState":
        return BatchState(self.t, self.prev_visited.copy(), self.prev_visit_prob.copy(),
                          self.prev_store_score.copy(),
                          [dict(r) for r in self.prev_qty_rows])


@dataclass
class BatchStepResult:
    visited: np.ndarray            # (B,) bool
    visit_prob: np.ndarray         # (B,)
    revenue: np.ndarray            # (B,)
    redeemed_discount: np.ndarray  # (B,)
    cust_rows: np.ndarray          # (K,) row index of each purchase
    categories: np.ndarray         # (K,)
    products: np.ndarray           # (K,)
    quantities: np.ndarray         # (K,)
    unit_prices: np.ndarray        # (K,)

    def outcome_for(self, row: int) -> PurchaseOutcome:
        sel = self.cust_rows == row
        return PurchaseOutcome(
            visited=bool(self.visited[row]), categories=self.categories[sel],
            products=self.products[sel], quantities=self.quantities[sel],
            unit_prices=self.unit_prices[sel], revenue=float(self.revenue[row]),
            redeemed_discount=float(self.redeemed_discount[row]))


def simulate_batch_step(catalog: Catalog, customers: CustomerPopulation,
                        state: BatchState, shelf_prices: np.ndarray,
                        coupons: np.ndarray, x_product: np.ndarray, x_store: float,
                        uniforms: np.ndarray, max_rate: float = 1e3) -> BatchStepResult:
    """Advance every customer in the batch by one step, in place on ``state``.

    ``uniforms`` is (B, 1 + 3J): column 0 drives the visit stage, then J
    columns each for the category, product-choice and quantity stages.
    """
    B = len(customers)
    J = catalog.n_categories
    if uniforms.shape != (B, draws_per_step(J)):
        raise ValueError("uniform block has the wrong shape")
    if np.any(shelf_prices <= 0.0):
        raise ValueError("shelf prices must be > 0")

    # Stage 1: visit. Probability 1 on the very first step.
    if state.t == 1:
        visit_prob = np.ones(B)
    else:
        mu_store = (customers.store_intercept
                    + state.prev_visited * customers.browse_carryover * state.prev_store_score
                    + customers.marketing_coef * x_store)
        theta = customers.inertia
        visit_prob = (1.0 - theta) * sigmoid(mu_store) + theta * state.prev_visit_prob
    visited = uniforms[:, 0] < visit_prob

    rows = np.flatnonzero(visited)
    revenue = np.zeros(B)
    redeemed = np.zeros(B)
    new_qty_rows = [{} for _ in range(B)]

    if rows.size:
        # Utilities for visiting customers only; the coupon shifts log price
        # by log(1 - D) uniformly across products.
        log_shelf = np.log(shelf_prices)
        bx = customers.beta_x[rows, None]
        bz = customers.beta_z[rows, None]
        bw = customers.beta_w[rows]
        log_price = log_shelf[None, :] + np.log1p(-coupons[rows])[:, None]
        mu = (bx * x_product[None, :] + bz * catalog.z[None, :]
              + (bw[:, None] * catalog.price_factor[None, :]) * log_price)

        cv, exp_shifted = _segment_logsumexp(mu, catalog.cat_starts, catalog.cat_counts)
        sv_max = cv.max(axis=-1, keepdims=True)
        sv = (sv_max + np.log(np.sum(np.exp(cv - sv_max), axis=-1, keepdims=True)))[:, 0]

        # Stage 2: independent Bernoulli category purchases.
        cat_prob = sigmoid(catalog.cate_intercept[None, :] + catalog.cate_slope[None, :] * cv)
        purchased = uniforms[rows, 1:1 + J] < cat_prob

        # Stage 3: multinomial-logit product choice by CDF inversion on the
        # in-category cumulative of exp(mu - segmax).
        u_choice = uniforms[rows, 1 + J:1 + 2 * J]
        chosen = np.empty((rows.size, J), dtype=np.int64)
        for j in range(J):
            s = catalog.cat_starts[j]
            n_j = catalog.cat_counts[j]
            inseg = np.cumsum(exp_shifted[:, s:s + n_j], axis=-1)
            thr = u_choice[:, j] * inseg[:, -1]
            idx = np.sum(inseg < thr[:, None], axis=-1)
            chosen[:, j] = s + np.minimum(idx, n_j - 1)

        # Stage 4: shifted-Poisson quantity for purchased categories.
        r_idx, c_idx = np.nonzero(purchased)
        if r_idx.size:
            prod = chosen[r_idx, c_idx]
            glob = rows[r_idx]
            mu_chosen = mu[r_idx, prod]
            log_rate = catalog.qty_intercept[prod] + customers.qty_slope[glob] * mu_chosen
            rate = capped_rate(log_rate, max_rate)
            u_qty = uniforms[glob, 1 + 2 * J + c_idx]
            qty = 1 + poisson_from_uniform(rate, u_qty)
            unit_price = shelf_prices[prod] * (1.0 - coupons[glob])
            np.add.at(revenue, glob, unit_price * qty)
            redeemed[glob] = coupons[glob]
            for g, p, q in zip(glob.tolist(), prod.tolist(), qty.tolist()):
                new_qty_rows[g][p] = new_qty_rows[g].get(p, 0) + q
            cust_rows, categories = glob, c_idx.astype(np.int64)
            products, quantities, unit_prices = prod, qty, unit_price
        else:
            cust_rows = np.empty(0, dtype=np.int64)
            categories = products = quantities = np.empty(0, dtype=np.int64)
            unit_prices = np.empty(0)

        state.prev_store_score[rows] = sv
    else:
        cust_rows = np.empty(0, dtype=np.int64)
        categories = products = quantities = np.empty(0, dtype=np.int64)
        unit_prices = np.empty(0)

    state.prev_visited = visited.astype(np.int8)
    state.prev_visit_prob = visit_prob
    state.prev_qty_rows = new_qty_rows
    state.t += 1

    return BatchStepResult(visited=visited, visit_prob=visit_prob, revenue=revenue,
                           redeemed_discount=redeemed, cust_rows=cust_rows,
                           categories=categories, products=products,
                           quantities=quantities, unit_prices=unit_prices)


def simulate_customer_step(catalog: Catalog, customer: CustomerPopulation,
                           state: CustomerState, shelf_prices: np.ndarray,
                           coupon: float, x_product: np.ndarray, x_store: float,
                           rng: np.random.Generator,
                           max_rate: float = 1e3) -> tuple[PurchaseOutcome, CustomerState]:
    """One customer's step; the single-row view of :func:`simulate_batch_step`.

    ``customer`` is a length-1 population slice; ``rng`` supplies this step's
    uniform block.
    """
    if len(customer) != 1:
        raise ValueError("expected a single-customer population slice")
    J = catalog.n_categories
    uniforms = rng.random(draws_per_step(J))[None, :]
    batch = BatchState(t=state.t,
                       prev_visited=np.array([state.prev_visited], dtype=np.int8),
                       prev_visit_prob=np.array([state.prev_visit_prob]),
                       prev_store_score=np.array([state.prev_store_score]),
                       prev_qty_rows=[dict(state.prev_quantities)])
    res = simulate_batch_step(catalog, customer, batch, shelf_prices,
                              np.array([coupon]), x_product, x_store, uniforms,
                              max_rate=max_rate)
    new_state = CustomerState(t=batch.t, prev_visited=int(batch.prev_visited[0]),
                              prev_visit_prob=float(batch.prev_visit_prob[0]),
                              prev_store_score=float(batch.prev_store_score[0]),
                              prev_quantities=batch.prev_qty_rows[0])
    return res.outcome_for(0), new_state
