#include "hybres/artifacts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "hybres/error.hpp"

namespace hybres::artifacts {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 640.0;
constexpr double kMargin = 60.0;

struct Frame {
    double x_min;
    double x_max;
    double y_min;
    double y_max;

    [[nodiscard]] double px(double x) const { return kMargin + (x - x_min) / (x_max - x_min) * (kWidth - 2 * kMargin); }
    [[nodiscard]] double py(double y) const {
        return kHeight - kMargin - (y - y_min) / (y_max - y_min) * (kHeight - 2 * kMargin);
    }
};

std::string f2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<':
                out += "&lt;";
                break;
            case '>':
                out += "&gt;";
                break;
            case '&':
                out += "&amp;";
                break;
            default:
                out += c;
        }
    }
    return out;
}

void header(std::ostringstream& o, const std::string& title) {
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\" "
         "patternTransform=\"rotate(45)\"><line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\"white\" "
         "stroke-width=\"2\"/></pattern></defs>\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << kWidth / 2 << "\" y=\"30\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
      << "</text>\n";
}

void axes(std::ostringstream& o, const Frame& f, const std::string& x_label, const std::string& y_label) {
    o << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kWidth - 2 * kMargin << "\" height=\""
      << kHeight - 2 * kMargin << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = f.x_min + (f.x_max - f.x_min) * k / 4.0;
        const double yv = f.y_min + (f.y_max - f.y_min) * k / 4.0;
        o << "<text x=\"" << f2(f.px(xv)) << "\" y=\"" << kHeight - kMargin + 16 << "\" text-anchor=\"middle\">"
          << f2(xv) << "</text>\n";
        o << "<text x=\"" << kMargin - 6 << "\" y=\"" << f2(f.py(yv) + 4) << "\" text-anchor=\"end\">" << f2(yv)
          << "</text>\n";
    }
    o << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 20 << "\" text-anchor=\"middle\">" << escape(x_label)
      << "</text>\n";
    o << "<text x=\"18\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << kHeight / 2
      << ")\">" << escape(y_label) << "</text>\n";
}

void draw_lines(std::ostringstream& o, const Frame& f, const std::vector<LineSet>& sets) {
    for (const auto& set : sets) {
        for (const auto& line : set.lines) {
            if (line.size() < 2) continue;
            o << "<polyline fill=\"none\" stroke=\"" << set.color << "\" stroke-width=\"" << set.width
              << "\" points=\"";
            for (const auto& p : line) o << f2(f.px(p.x)) << ',' << f2(f.py(p.y)) << ' ';
            o << "\"/>\n";
        }
    }
}

// Emits one rect per run of equal keys along each grid row.
template <typename KeyFn, typename FillFn>
void run_length_cells(std::ostringstream& o, const GridSpec& g, const Frame& f, KeyFn key, FillFn fill) {
    const double cw = (kWidth - 2 * kMargin) / static_cast<double>(g.nx);
    const double ch = (kHeight - 2 * kMargin) / static_cast<double>(g.ny);
    for (std::size_t j = 0; j < g.ny; ++j) {
        std::size_t i = 0;
        while (i < g.nx) {
            const int k0 = key(g.index(i, j));
            std::size_t end = i + 1;
            while (end < g.nx && key(g.index(end, j)) == k0) ++end;
            const std::string color = fill(k0);
            if (!color.empty()) {
                const double x = kMargin + cw * static_cast<double>(i);
                const double y = kHeight - kMargin - ch * static_cast<double>(j + 1);
                o << "<rect x=\"" << f2(x) << "\" y=\"" << f2(y) << "\" width=\"" << f2(cw * static_cast<double>(end - i) + 0.3)
                  << "\" height=\"" << f2(ch + 0.3) << "\" fill=\"" << color << "\"/>\n";
            }
            i = end;
        }
    }
    (void)f;
}

}  // namespace

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 computation failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int k = 0; k < len; ++k) {
        out += hex[digest[k] >> 4];
        out += hex[digest[k] & 0xf];
    }
    return out;
}

OutputDir::OutputDir(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
}

void OutputDir::write(const std::string& name, const std::string& content) {
    const auto path = root_ / name;
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) throw Error("cannot write " + path.string());
    files_.push_back({name, sha256_hex(content), content.size()});
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::string category_svg(const GridSpec& grid, const std::vector<int>& values, const std::vector<std::string>& palette,
                         const std::vector<std::string>& legend, const std::vector<LineSet>& lines,
                         const std::string& title) {
    std::ostringstream o;
    header(o, title);
    const Frame f{grid.x_min, grid.x_max, grid.y_min, grid.y_max};
    run_length_cells(
        o, grid, f, [&](std::size_t k) { return values[k]; },
        [&](int v) { return v >= 0 && static_cast<std::size_t>(v) < palette.size() ? palette[v] : std::string("#000"); });
    draw_lines(o, f, lines);
    axes(o, f, "delta12 (rad)", "delta13 (rad)");
    for (std::size_t k = 0; k < legend.size() && k < palette.size(); ++k) {
        const double y = 44.0;
        const double x = kMargin + 90.0 * static_cast<double>(k);
        o << "<rect x=\"" << x << "\" y=\"" << y - 9 << "\" width=\"10\" height=\"10\" fill=\"" << palette[k]
          << "\" stroke=\"black\" stroke-width=\"0.5\"/><text x=\"" << x + 14 << "\" y=\"" << y << "\">"
          << escape(legend[k]) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

std::string scalar_svg(const GridSpec& grid, const std::vector<double>& values, const std::vector<std::uint8_t>* hatch,
                       const std::vector<LineSet>& lines, const std::string& title) {
    double span = 0.0;
    for (double v : values) {
        if (std::isfinite(v)) span = std::max(span, std::abs(v));
    }
    if (span == 0.0) span = 1.0;
    constexpr int kLevels = 8;
    auto level = [&](std::size_t k) {
        const double v = values[k];
        if (!std::isfinite(v)) return 1000;
        const int q = static_cast<int>(std::floor(v / span * kLevels));
        return std::clamp(q, -kLevels, kLevels - 1);
    };
    auto color = [&](int q) -> std::string {
        if (q == 1000) return "#cccccc";
        const double t = (static_cast<double>(q) + 0.5) / kLevels;  // in (-1, 1)
        int r;
        int g;
        int b;
        if (t < 0.0) {
            r = static_cast<int>(255 * (1.0 + t));
            g = static_cast<int>(255 * (1.0 + t));
            b = 255;
        } else {
            r = 255;
            g = static_cast<int>(255 * (1.0 - t));
            b = static_cast<int>(255 * (1.0 - t));
        }
        char buf[16];
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
        return buf;
    };
    std::ostringstream o;
    header(o, title);
    const Frame f{grid.x_min, grid.x_max, grid.y_min, grid.y_max};
    run_length_cells(o, grid, f, level, color);
    if (hatch != nullptr) {
        run_length_cells(
            o, grid, f, [&](std::size_t k) { return static_cast<int>((*hatch)[k]); },
            [](int v) { return v != 0 ? std::string("url(#hatch)") : std::string(); });
    }
    draw_lines(o, f, lines);
    axes(o, f, "delta12 (rad)", "delta13 (rad)");
    o << "<text x=\"" << kWidth - kMargin << "\" y=\"48\" text-anchor=\"end\">blue &lt; 0 &lt; red, |max| = "
      << num(span) << "</text>\n";
    o << "</svg>\n";
    return o.str();
}

std::string series_svg(const std::vector<double>& x, const std::vector<Series>& series, const std::string& title,
                       const std::string& x_label) {
    double y_min = 0.0;
    double y_max = 0.0;
    bool first = true;
    for (const auto& s : series) {
        for (double v : s.y) {
            if (!std::isfinite(v)) continue;
            if (first) {
                y_min = y_max = v;
                first = false;
            }
            y_min = std::min(y_min, v);
            y_max = std::max(y_max, v);
        }
    }
    if (y_max <= y_min) {
        y_min -= 1.0;
        y_max += 1.0;
    }
    const double x_min = x.empty() ? 0.0 : x.front();
    const double x_max = x.empty() || x.back() <= x_min ? x_min + 1.0 : x.back();
    const Frame f{x_min, x_max, y_min, y_max};
    std::ostringstream o;
    header(o, title);
    // Thin the samples to about one point per horizontal pixel.
    const std::size_t stride = std::max<std::size_t>(1, x.size() / 1000);
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.2\" points=\"";
        for (std::size_t i = 0; i < x.size() && i < s.y.size(); i += stride) {
            if (std::isfinite(s.y[i])) o << f2(f.px(x[i])) << ',' << f2(f.py(s.y[i])) << ' ';
        }
        o << "\"/>\n";
        o << "<text x=\"" << kMargin + 10 + 120.0 * static_cast<double>(k) << "\" y=\"48\" fill=\"" << s.color << "\">"
          << escape(s.name) << "</text>\n";
    }
    axes(o, f, x_label, "");
    o << "</svg>\n";
    return o.str();
}

}  // namespace hybres::artifacts
