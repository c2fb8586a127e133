#pragma once

#include <compare>
#include <functional>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_set>

namespace multired {

// Interned name. Equality is pointer identity, ordering is by the name text
// so that canonical forms do not depend on interning order.
class Symbol {
public:
    Symbol() = default;
    explicit Symbol(std::string_view name) : name_(intern(name)) {}

    const std::string& name() const {
        static const std::string empty;
        return name_ ? *name_ : empty;
    }
    bool valid() const { return name_ != nullptr; }

    friend bool operator==(Symbol a, Symbol b) { return a.name_ == b.name_; }
    friend std::strong_ordering operator<=>(Symbol a, Symbol b) {
        if (a.name_ == b.name_) return std::strong_ordering::equal;
        int c = a.name().compare(b.name());
        return c < 0 ? std::strong_ordering::less : std::strong_ordering::greater;
    }

private:
    static const std::string* intern(std::string_view name) {
        static std::mutex mu;
        static std::unordered_set<std::string> table;
        std::lock_guard lock(mu);
        return &*table.emplace(name).first;
    }

    const std::string* name_ = nullptr;
};

}  // namespace multired

template <>
struct std::hash<multired::Symbol> {
    size_t operator()(multired::Symbol s) const noexcept {
        return std::hash<const void*>{}(&s.name());
    }
};
