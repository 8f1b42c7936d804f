#pragma once

#include <cstdint>
#include <cstdlib>
#include <ostream>
#include <string>

namespace vgold {

// Currency is kept in integer cents so sums never drift.
class Cents {
public:
    constexpr Cents() = default;
    constexpr explicit Cents(std::int64_t value) : value_(value) {}

    [[nodiscard]] constexpr std::int64_t value() const { return value_; }
    [[nodiscard]] constexpr double dollars() const { return static_cast<double>(value_) / 100.0; }

    [[nodiscard]] std::string str() const {
        const std::int64_t a = std::llabs(value_);
        std::string frac = std::to_string(a % 100);
        if (frac.size() < 2) frac.insert(0, "0");
        return std::string(value_ < 0 ? "-" : "") + std::to_string(a / 100) + "." + frac;
    }

    constexpr Cents& operator+=(Cents o) { value_ += o.value_; return *this; }
    constexpr Cents& operator-=(Cents o) { value_ -= o.value_; return *this; }
    friend constexpr Cents operator+(Cents a, Cents b) { return Cents(a.value_ + b.value_); }
    friend constexpr Cents operator-(Cents a, Cents b) { return Cents(a.value_ - b.value_); }
    friend constexpr Cents operator*(Cents a, std::int64_t k) { return Cents(a.value_ * k); }
    friend constexpr Cents operator*(std::int64_t k, Cents a) { return Cents(a.value_ * k); }
    friend constexpr auto operator<=>(Cents, Cents) = default;

    friend std::ostream& operator<<(std::ostream& os, Cents c) { return os << '$' << c.str(); }

private:
    std::int64_t value_ = 0;
};

constexpr Cents max(Cents a, Cents b) { return a < b ? b : a; }

/// Rounds a dollar amount to the nearest cent.
inline Cents cents_from_dollars(double dollars) {
    return Cents(static_cast<std::int64_t>(dollars * 100.0 + (dollars < 0 ? -0.5 : 0.5)));
}

} // namespace vgold
