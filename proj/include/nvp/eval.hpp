#pragma once

#include <limits>
#include <ostream>

#include "nvp/generative.hpp"
#include "nvp/training.hpp"

namespace nvp {

// 10*log10(peak^2 / MSE) in dB. A zero MSE returns +inf as the "perfect"
// sentinel; callers exclude it from aggregation rather than clamping.
template <typename T>
double psnr(const TensorT<T>& x, const TensorT<T>& y, double peak) {
    if (x.shape() != y.shape()) throw ShapeError("psnr: shape mismatch");
    if (peak <= 0.0) throw Error("psnr: peak must be > 0");
    double acc = 0.0;
    const auto& xd = x.data();
    const auto& yd = y.data();
    for (std::size_t i = 0; i < xd.size(); ++i) {
        const double d = double(xd[i]) - double(yd[i]);
        acc += d * d;
    }
    const double mse = acc / double(xd.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

inline double psnr_from_pool(double sq_sum, double count, double peak) {
    if (count <= 0.0) throw Error("psnr: empty pool");
    if (sq_sum == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / (sq_sum / count));
}

// Per-horizon PSNR from pooled squared errors over all windows and pixels;
// the aggregate pools across horizons too (never an average of PSNRs).
struct EvalReport {
    std::vector<double> horizon_psnr;
    double aggregate = 0.0;
    std::vector<double> per_window;  // pooled over all horizons of one window
    std::int64_t windows = 0;
};

template <typename T>
struct EvalResult {
    EvalReport model;
    EvalReport persistence;  // repeat-last-frame floor reference
    double peak = 0.0;
};

namespace detail {

struct ErrorPool {
    std::vector<double> sq;
    std::vector<double> count;
    explicit ErrorPool(std::int64_t horizons) : sq(horizons, 0.0), count(horizons, 0.0) {}
};

template <typename T>
void pool_window(ErrorPool& pool, const std::vector<TensorT<T>>& pred,
                 const std::vector<TensorT<T>>& truth, std::size_t offset, double* window_sq,
                 double* window_count) {
    for (std::size_t h = 0; h < pred.size(); ++h) {
        const auto& pd = pred[h].data();
        const auto& td = truth[offset + h].data();
        double acc = 0.0;
        for (std::size_t i = 0; i < pd.size(); ++i) {
            const double d = double(pd[i]) - double(td[i]);
            acc += d * d;
        }
        pool.sq[h] += acc;
        pool.count[h] += double(pd.size());
        *window_sq += acc;
        *window_count += double(pd.size());
    }
}

inline EvalReport finish_report(const ErrorPool& pool, std::vector<double> per_window,
                                double peak) {
    EvalReport r;
    r.windows = static_cast<std::int64_t>(per_window.size());
    r.per_window = std::move(per_window);
    double total_sq = 0.0, total_count = 0.0;
    for (std::size_t h = 0; h < pool.sq.size(); ++h) {
        r.horizon_psnr.push_back(psnr_from_pool(pool.sq[h], pool.count[h], peak));
        total_sq += pool.sq[h];
        total_count += pool.count[h];
    }
    r.aggregate = psnr_from_pool(total_sq, total_count, peak);
    return r;
}

}  // namespace detail

// Rolls the model over non-overlapping (by default) windows of the given
// range, pooling squared prediction errors per horizon. The persistence
// baseline (repeat the last observation) is always computed alongside.
// peak_override <= 0 selects the default peak: max |value| over the range.
template <typename T>
EvalResult<T> evaluate(GenerativeModel<T>& model, const TensorT<T>& frames, std::int64_t t,
                       std::int64_t n, std::int64_t stride, std::int64_t range_lo,
                       std::int64_t range_hi, double peak_override = 0.0) {
    if (frames.rank() != 3) throw DataError("evaluate: frames must be [T,H,W]");
    const auto starts = window_starts(range_lo, range_hi, t + n, stride);

    double peak = peak_override;
    if (peak <= 0.0) {
        const std::int64_t hw = frames.extent(1) * frames.extent(2);
        for (std::int64_t i = range_lo * hw; i < range_hi * hw; ++i)
            peak = std::max(peak, std::abs(double(frames.data()[i])));
        if (peak <= 0.0) throw DataError("evaluate: all-zero ground truth, peak undefined");
    }

    detail::ErrorPool model_pool(n), persist_pool(n);
    std::vector<double> model_windows, persist_windows;

    NoGradGuard no_grad;
    for (std::int64_t start : starts) {
        SequenceBatch<T> batch = make_batch(frames, {start}, t, n);
        auto all = split_frames(batch);
        std::vector<TensorT<T>> obs(all.begin(), all.begin() + t);
        auto out = generator_forward(model, obs, n);

        double wsq = 0.0, wcount = 0.0;
        detail::pool_window(model_pool, out.pred, all, static_cast<std::size_t>(t), &wsq,
                            &wcount);
        model_windows.push_back(psnr_from_pool(wsq, wcount, peak));

        std::vector<TensorT<T>> persist(static_cast<std::size_t>(n), all[t - 1]);
        double psq = 0.0, pcount = 0.0;
        detail::pool_window(persist_pool, persist, all, static_cast<std::size_t>(t), &psq,
                            &pcount);
        persist_windows.push_back(psnr_from_pool(psq, pcount, peak));
    }

    EvalResult<T> result;
    result.peak = peak;
    result.model = detail::finish_report(model_pool, std::move(model_windows), peak);
    result.persistence = detail::finish_report(persist_pool, std::move(persist_windows), peak);
    return result;
}

// CSV contract: header "horizon,psnr", one row per horizon, final row
// "aggregate,<value>".
inline void write_report_csv(std::ostream& os, const EvalReport& report) {
    os << "horizon,psnr\n";
    char buf[64];
    for (std::size_t h = 0; h < report.horizon_psnr.size(); ++h) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", h + 1, report.horizon_psnr[h]);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "aggregate,%.9g\n", report.aggregate);
    os << buf;
}

}  // namespace nvp
