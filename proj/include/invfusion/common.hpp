#ifndef INVFUSION_COMMON_HPP
#define INVFUSION_COMMON_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace invfusion {

template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Image layout is channel-major, then row-major spatial:
// vec index = ch*h*w + row*w + col. The dense oracle and the FFT path
// both rely on this ordering.
struct ImageShape {
    int c = 0;
    int h = 0;
    int w = 0;

    int64_t pixels() const { return int64_t(h) * w; }
    int64_t dim() const { return int64_t(c) * h * w; }
    bool operator==(const ImageShape& o) const { return c == o.c && h == o.h && w == o.w; }
    bool operator!=(const ImageShape& o) const { return !(*this == o); }
    std::string str() const {
        return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
    }
};

inline int64_t image_index(const ImageShape& s, int ch, int row, int col) {
    return (int64_t(ch) * s.h + row) * s.w + col;
}

struct shape_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}
inline void require_shape(bool cond, const std::string& msg) {
    if (!cond) throw shape_error(msg);
}
inline void require_config(bool cond, const std::string& msg) {
    if (!cond) throw config_error(msg);
}

}  // namespace invfusion

#endif
