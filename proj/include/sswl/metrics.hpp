#pragma once

/// Per-image quality metrics and the two-sample significance test.

#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "sswl/ct_dataio.hpp"
#include "sswl/tensor.hpp"

namespace sswl {

/// Read-only view of one single-channel image.
template <class T>
struct ImageView {
    std::span<const T> px;
    int h = 0;
    int w = 0;

    ImageView(std::span<const T> p, int height, int width) : px(p), h(height), w(width) {
        if (px.size() != std::size_t(h) * w) throw ValidationError("image view size does not match dims");
    }
    ImageView(const CTSlice& s) requires std::is_same_v<T, float> : ImageView(s.pixels, s.height, s.width) {}

    double operator()(int y, int x) const noexcept { return double(px[std::size_t(y) * w + x]); }
};

template <class T>
ImageView<T> image_of(const Tensor<T>& t, int n = 0) {
    if (t.c() != 1) throw ValidationError("metrics expect single-channel images");
    return {t.sample(n), t.h(), t.w()};
}

namespace detail {
template <class A, class B>
void require_same_dims(const ImageView<A>& a, const ImageView<B>& b, const char* what) {
    if (a.h != b.h || a.w != b.w) throw ValidationError(std::string(what) + ": image shapes differ");
}
}  // namespace detail

template <class A, class B>
double mse(const ImageView<A>& pred, const ImageView<B>& ref) {
    detail::require_same_dims(pred, ref, "mse");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.px.size(); ++i) {
        const double d = double(pred.px[i]) - double(ref.px[i]);
        acc += d * d;
    }
    return acc / double(pred.px.size());
}

/// +inf when the images are identical.
template <class A, class B>
double psnr(const ImageView<A>& pred, const ImageView<B>& ref, double data_range = 1.0) {
    const double m = mse(pred, ref);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / m);
}

template <class A, class B>
double nrmse(const ImageView<A>& pred, const ImageView<B>& ref) {
    detail::require_same_dims(pred, ref, "nrmse");
    double energy = 0.0;
    for (auto v : ref.px) energy += double(v) * double(v);
    if (energy == 0.0) throw ValidationError("nrmse: reference image is all zero");
    return std::sqrt(mse(pred, ref)) / std::sqrt(energy / double(ref.px.size()));
}

enum class SsimWindow { uniform7, gaussian11 };

struct SsimOptions {
    double data_range = 1.0;
    SsimWindow window = SsimWindow::uniform7;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Mean local SSIM over every fully-contained window position. The uniform
/// window uses sample (N - 1) normalization of the local (co)variances; the
/// Gaussian window (sigma 1.5) uses weighted population moments.
template <class A, class B>
double ssim(const ImageView<A>& x, const ImageView<B>& y, const SsimOptions& opt = {}) {
    detail::require_same_dims(x, y, "ssim");
    const int win = opt.window == SsimWindow::uniform7 ? 7 : 11;
    if (x.h < win || x.w < win)
        throw ValidationError("ssim: image " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                              " is smaller than the " + std::to_string(win) + "x" + std::to_string(win) + " window");
    const double c1 = (opt.k1 * opt.data_range) * (opt.k1 * opt.data_range);
    const double c2 = (opt.k2 * opt.data_range) * (opt.k2 * opt.data_range);
    const int oh = x.h - win + 1, ow = x.w - win + 1;

    const auto local = [&](double mx, double my, double exx, double eyy, double exy, double norm) {
        const double vx = norm * (exx - mx * mx), vy = norm * (eyy - my * my), cxy = norm * (exy - mx * my);
        return ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    };

    double total = 0.0;
    if (opt.window == SsimWindow::uniform7) {
        // Summed-area tables of x, y, x^2, y^2, xy.
        const int W = x.w + 1;
        std::vector<double> sx((x.h + 1) * W), sy(sx.size()), sxx(sx.size()), syy(sx.size()), sxy(sx.size());
        for (int r = 0; r < x.h; ++r)
            for (int c = 0; c < x.w; ++c) {
                const double a = x(r, c), b = y(r, c);
                const int i = (r + 1) * W + c + 1, up = r * W + c + 1, lf = (r + 1) * W + c, ul = r * W + c;
                sx[i] = a + sx[up] + sx[lf] - sx[ul];
                sy[i] = b + sy[up] + sy[lf] - sy[ul];
                sxx[i] = a * a + sxx[up] + sxx[lf] - sxx[ul];
                syy[i] = b * b + syy[up] + syy[lf] - syy[ul];
                sxy[i] = a * b + sxy[up] + sxy[lf] - sxy[ul];
            }
        const double np = double(win * win);
        const double norm = np / (np - 1.0);
        const auto box = [&](const std::vector<double>& s, int r, int c) {
            return (s[(r + win) * W + c + win] - s[r * W + c + win] - s[(r + win) * W + c] + s[r * W + c]) / np;
        };
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c)
                total += local(box(sx, r, c), box(sy, r, c), box(sxx, r, c), box(syy, r, c), box(sxy, r, c), norm);
    } else {
        std::vector<double> g(win);
        double gs = 0.0;
        for (int i = 0; i < win; ++i) gs += g[i] = std::exp(-0.5 * std::pow((i - win / 2) / 1.5, 2));
        for (auto& v : g) v /= gs;
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c) {
                double mx = 0, my = 0, exx = 0, eyy = 0, exy = 0;
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        const double wgt = g[i] * g[j], a = x(r + i, c + j), b = y(r + i, c + j);
                        mx += wgt * a;
                        my += wgt * b;
                        exx += wgt * (a * a);
                        eyy += wgt * (b * b);
                        exy += wgt * (a * b);
                    }
                total += local(mx, my, exx, eyy, exy, 1.0);
            }
    }
    return total / double(oh * ow);
}

/// Rectangular crop of an image, copied.
template <class T>
std::vector<T> crop(const ImageView<T>& img, int x0, int y0, int cw, int ch) {
    if (x0 < 0 || y0 < 0 || cw < 1 || ch < 1 || x0 + cw > img.w || y0 + ch > img.h)
        throw ValidationError("crop rectangle lies outside the image");
    std::vector<T> out;
    out.reserve(std::size_t(cw) * ch);
    for (int r = y0; r < y0 + ch; ++r)
        for (int c = x0; c < x0 + cw; ++c) out.push_back(img.px[std::size_t(r) * img.w + c]);
    return out;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricReport {
    double psnr_db = 0.0;
    double ssim = 0.0;
    double mse = 0.0;
    double nrmse = 0.0;
    int n_images = 1;
};

template <class A, class B>
MetricReport evaluate_image(const ImageView<A>& pred, const ImageView<B>& ref, const SsimOptions& opt = {}) {
    return {psnr(pred, ref, opt.data_range), ssim(pred, ref, opt), mse(pred, ref), nrmse(pred, ref), 1};
}

/// Unweighted mean of each metric; n_images is summed.
inline MetricReport aggregate(std::span<const MetricReport> reports) {
    if (reports.empty()) throw ValidationError("aggregate: no reports");
    MetricReport out{0.0, 0.0, 0.0, 0.0, 0};
    for (const auto& r : reports) {
        out.psnr_db += r.psnr_db;
        out.ssim += r.ssim;
        out.mse += r.mse;
        out.nrmse += r.nrmse;
        out.n_images += r.n_images;
    }
    const double n = double(reports.size());
    out.psnr_db /= n;
    out.ssim /= n;
    out.mse /= n;
    out.nrmse /= n;
    return out;
}

// ---------------------------------------------------------------------------
// Welch's two-sample t-test

struct TTestResult {
    double t_statistic = 0.0;
    double degrees_of_freedom = 0.0;
    double p_value = 1.0;
};

inline TTestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw ValidationError("welch_t_test needs at least two values per sample");
    const auto moments = [](std::span<const double> s) {
        const double n = double(s.size());
        const double mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
        double ss = 0.0;
        for (double v : s) ss += (v - mean) * (v - mean);
        return std::pair{mean, ss / (n - 1.0)};
    };
    const auto [ma, va] = moments(a);
    const auto [mb, vb] = moments(b);
    const double na = double(a.size()), nb = double(b.size());
    const double qa = va / na, qb = vb / nb;
    const double se2 = qa + qb;
    if (se2 == 0.0) {
        // Both samples constant.
        if (ma == mb) return {0.0, na + nb - 2.0, 1.0};
        const double inf = std::numeric_limits<double>::infinity();
        return {ma > mb ? inf : -inf, na + nb - 2.0, 0.0};
    }
    TTestResult r;
    r.t_statistic = (ma - mb) / std::sqrt(se2);
    r.degrees_of_freedom = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    const boost::math::students_t dist(r.degrees_of_freedom);
    r.p_value = std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t_statistic))), 0.0, 1.0);
    return r;
}

}  // namespace sswl
